"""
Synthetic rPPG-like domains and a closed-form-trainable toy layered model.

A domain is a set of subjects; each subject has a ground-truth heart-rate
trajectory, the blood volume pulse (BVP) it implies, and a per-frame feature
vector that linearly mixes the pulse with distractors, an optional in-band
confound, noise and an illumination offset. A sensor angle rotates the mixed
signal along one shared path in feature space. The toy model is a stack of fixed seeded random
tanh layers (reservoir style) with a ridge-regression BVP readout.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm
from scipy.signal import lfilter

from .config import DomainSpec
from .exceptions import SpecError, SubjectLookupError, TrainingError
from .tensorio import ActivationSet, LayerActivations

logger = logging.getLogger(__name__)

HR_MIN_BPM = 40.0
HR_MAX_BPM = 180.0

# HR random walk correlation time, seconds
HR_CORRELATION_S = 5.0
# distractor sinusoids: respiration-like and slow motion-like bands, Hz
DISTRACTOR_BANDS = ((0.15, 0.4), (0.03, 0.12))
N_SOURCES = 2 + len(DISTRACTOR_BANDS)
# in-band interferer, Hz: inside the 40-180 BPM search band, above resting heart rates
CONFOUND_BAND = (2.5, 2.9)

# layer gain keeps tanh mostly out of saturation for unit-scale inputs
LAYER_GAIN = 0.9


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    features: np.ndarray   # frames x feature_dim
    bvp: np.ndarray        # frames
    hr_bpm: np.ndarray     # frames


@dataclass(frozen=True)
class SyntheticDataset:
    domain_id: str
    fps: float
    subjects: Tuple[SubjectRecord, ...]

    @property
    def subject_ids(self) -> List[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def feature_dim(self) -> int:
        return self.subjects[0].features.shape[1]

    def subject(self, subject_id: str) -> SubjectRecord:
        for record in self.subjects:
            if record.subject_id == subject_id:
                return record
        raise SubjectLookupError(f"Unknown subject {subject_id!r} in domain {self.domain_id}")

    def select(self, subject_ids: Sequence[str]) -> List[SubjectRecord]:
        """Records in deterministic (sorted subject_id) order"""
        return [self.subject(s) for s in sorted(subject_ids)]


def _subject_rngs(seed: int, count: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def mixing_matrix(mixing_seed: int, feature_dim: int) -> np.ndarray:
    """Fixed source -> feature mixing shared by every domain with the same mixing_seed"""
    rng = np.random.default_rng(np.random.SeedSequence([mixing_seed, feature_dim, 0x4D4958]))
    return rng.standard_normal((N_SOURCES, feature_dim)) / np.sqrt(N_SOURCES)


def confound_direction(mixing_seed: int, feature_dim: int) -> np.ndarray:
    """Feature-space direction of the confound, shared like the mixing"""
    rng = np.random.default_rng(np.random.SeedSequence([mixing_seed, feature_dim, 0x434F4E]))
    return rng.standard_normal(feature_dim) / np.sqrt(N_SOURCES)


def sensor_rotation(mixing_seed: int, feature_dim: int, angle: float) -> np.ndarray:
    """
    Orthogonal feature-space rotation exp(angle·K) for a fixed skew-symmetric K of unit spectral norm

    Rotations along one generator compose additively, so two domains differ
    by exactly the rotation of their angle difference.
    """
    rng = np.random.default_rng(np.random.SeedSequence([mixing_seed, feature_dim, 0x524F54]))
    G = rng.standard_normal((feature_dim, feature_dim))
    K = (G - G.T) / 2.0
    K /= np.linalg.norm(K, 2)
    return expm(angle * K)


def hr_trajectory(rng: np.random.Generator, frames: int, fps: float, hr_mean: float, hr_stddev: float) -> np.ndarray:
    """Mean-reverting Gaussian random walk with stationary stddev hr_stddev, clamped to [40, 180] BPM"""
    if hr_stddev == 0:
        return np.full(frames, float(hr_mean))
    rho = np.exp(-1.0 / (HR_CORRELATION_S * fps))
    steps = rng.standard_normal(frames)
    drive = hr_stddev * np.sqrt(1.0 - rho ** 2) * steps
    # stationary start
    drive[0] = hr_stddev * steps[0]
    deviation = lfilter([1.0], [1.0, -rho], drive)
    return np.clip(hr_mean + deviation, HR_MIN_BPM, HR_MAX_BPM)


def bvp_from_hr(hr_bpm: np.ndarray, fps: float, phase0: float = 0.0) -> np.ndarray:
    """Integrate instantaneous frequency; fundamental plus a half-amplitude second harmonic"""
    phase = phase0 + 2.0 * np.pi * np.cumsum(hr_bpm / 60.0) / fps
    return np.sin(phase) + 0.5 * np.sin(2.0 * phase)


def generate_domain(spec: DomainSpec) -> SyntheticDataset:
    """
    Generate a synthetic domain; a pure function of its DomainSpec

    Args:
        spec (DomainSpec): domain knobs

    Returns:
        SyntheticDataset
    """
    errors = spec.validate()
    if errors:
        raise SpecError("; ".join(errors))

    frames = spec.frames
    t = np.arange(frames) / spec.fps
    mixing = mixing_matrix(spec.mixing_seed, spec.feature_dim)
    confound = confound_direction(spec.mixing_seed, spec.feature_dim)
    rotation = sensor_rotation(spec.mixing_seed, spec.feature_dim, spec.sensor_angle) if spec.sensor_angle else None

    records = []
    for index, rng in enumerate(_subject_rngs(spec.seed, spec.subjects)):
        hr = hr_trajectory(rng, frames, spec.fps, spec.hr_mean, spec.hr_stddev)
        bvp = bvp_from_hr(hr, spec.fps, phase0=rng.uniform(0.0, 2.0 * np.pi))

        distractors = [
            np.sin(2.0 * np.pi * rng.uniform(lo, hi) * t + rng.uniform(0.0, 2.0 * np.pi))
            for lo, hi in DISTRACTOR_BANDS
        ]
        sources = np.column_stack([bvp, bvp ** 2 - np.mean(bvp ** 2)] + distractors)
        noise = rng.standard_normal((frames, spec.feature_dim)) * spec.noise_level
        mixed = sources @ mixing
        if spec.confound_amplitude > 0:
            # own stream so the main subject stream is unchanged by the knob
            crng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, 0x434F4E]))
            wave = np.sin(2.0 * np.pi * crng.uniform(*CONFOUND_BAND) * t + crng.uniform(0.0, 2.0 * np.pi))
            mixed = mixed + spec.confound_amplitude * np.outer(wave, confound)
        if rotation is not None:
            mixed = mixed @ rotation
        features = mixed + noise + spec.illumination_offset

        # quantize to dump precision so a dataset survives an .actv round trip unchanged
        records.append(SubjectRecord(
            subject_id=f"s{index:03d}",
            features=features.astype(np.float32).astype(np.float64),
            bvp=bvp,
            hr_bpm=hr,
        ))

    logger.debug(f"Generated domain {spec.domain_id}: {spec.subjects} subjects x {frames} frames")
    return SyntheticDataset(spec.domain_id, float(spec.fps), tuple(records))


# --- folds ---

@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    test_folds: Tuple[Tuple[str, ...], ...]

    def test_subjects(self, fold: int) -> List[str]:
        return sorted(self.test_folds[fold])

    def train_subjects(self, fold: int) -> List[str]:
        return sorted(s for k, part in enumerate(self.test_folds) if k != fold for s in part)


def make_fold_plan(subject_ids: Sequence[str], fold_count: int = 5, seed: int = 0) -> FoldPlan:
    """Subject-disjoint k-fold partition, deterministic given seed"""
    subject_ids = sorted(subject_ids)
    if fold_count < 2 or fold_count > len(subject_ids):
        raise SpecError(f"Cannot split {len(subject_ids)} subjects into {fold_count} folds")
    order = np.random.default_rng(seed).permutation(len(subject_ids))
    parts = np.array_split(order, fold_count)
    return FoldPlan(fold_count, tuple(tuple(sorted(subject_ids[i] for i in part)) for part in parts))


# --- toy model ---

@dataclass(frozen=True)
class ToyModel:
    model_id: str
    widths: Tuple[int, ...]
    feature_dim: int
    seed: int
    weights: Tuple[np.ndarray, ...] = field(repr=False)
    biases: Tuple[np.ndarray, ...] = field(repr=False)
    input_mean: Optional[np.ndarray] = field(default=None, repr=False)
    input_scale: Optional[np.ndarray] = field(default=None, repr=False)
    readout: Optional[np.ndarray] = field(default=None, repr=False)
    readout_bias: float = 0.0
    train_domain_id: Optional[str] = None
    ridge_lambda: Optional[float] = None

    @property
    def trained(self) -> bool:
        return self.readout is not None

    @property
    def layer_names(self) -> List[str]:
        return [f"layer{i + 1}" for i in range(len(self.widths))]

    def normalize(self, features: np.ndarray) -> np.ndarray:
        if self.input_mean is None:
            return features
        return (features - self.input_mean) / self.input_scale

    def hidden(self, features: np.ndarray) -> List[np.ndarray]:
        """Activations of every hidden layer for a frames x feature_dim input"""
        h = self.normalize(np.asarray(features, dtype=np.float64))
        outputs = []
        for W, b in zip(self.weights, self.biases):
            h = np.tanh(h @ W + b)
            outputs.append(h)
        return outputs

    def predict_bvp(self, features: np.ndarray) -> np.ndarray:
        if not self.trained:
            raise TrainingError(f"Model {self.model_id} has no trained readout")
        return self.hidden(features)[-1] @ self.readout + self.readout_bias


def build_toy_model(layer_widths: Sequence[int], feature_dim: int, seed: int, model_id: Optional[str] = None) -> ToyModel:
    """
    Fixed seeded random tanh layers

    Args:
        layer_widths: hidden widths, >= 2 entries
        feature_dim (int): input width
        seed (int): weight seed

    Returns:
        ToyModel: untrained
    """
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2:
        raise SpecError(f"Toy model needs >= 2 layers, got {len(widths)}")
    if any(w < 1 for w in widths) or feature_dim < 1:
        raise SpecError(f"Layer widths must be >= 1: {widths}, feature_dim={feature_dim}")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x544F59]))
    weights, biases = [], []
    fan_in = feature_dim
    for width in widths:
        weights.append(LAYER_GAIN * rng.standard_normal((fan_in, width)) / np.sqrt(fan_in))
        biases.append(0.1 * rng.standard_normal(width))
        fan_in = width

    return ToyModel(
        model_id=model_id or f"toy-{seed}",
        widths=widths,
        feature_dim=int(feature_dim),
        seed=int(seed),
        weights=tuple(weights),
        biases=tuple(biases),
    )


def _stack(records: Sequence[SubjectRecord]):
    features = np.vstack([r.features for r in records])
    bvp = np.concatenate([r.bvp for r in records])
    return features, bvp


def fit_readout(model: ToyModel, dataset: SyntheticDataset, train_subjects: Sequence[str],
                ridge_lambda: float = 1e-3, model_id: Optional[str] = None,
                normalize_inputs: bool = True) -> ToyModel:
    """
    Closed-form ridge readout from last-layer activations to ground-truth BVP

    With normalize_inputs, training also records the per-feature input
    normalization of the training subjects, so the training domain shapes
    every hidden layer. Without it the hidden layers stay those of the
    untrained model and only the readout depends on the data.

    Returns:
        ToyModel: a new trained model; the input model is unchanged
    """
    if not train_subjects:
        raise TrainingError("Empty training subject list")
    if ridge_lambda <= 0:
        raise TrainingError(f"ridge_lambda must be > 0, got {ridge_lambda}")
    if dataset.feature_dim != model.feature_dim:
        raise TrainingError(f"Dataset has {dataset.feature_dim} features, model expects {model.feature_dim}")

    features, bvp = _stack(dataset.select(train_subjects))
    normalized = model
    if normalize_inputs:
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        normalized = replace(model, input_mean=mean, input_scale=scale)
    H = normalized.hidden(features)[-1]

    # centering absorbs the intercept
    h_mean = H.mean(axis=0)
    y_mean = bvp.mean()
    Hc = H - h_mean
    A = Hc.T @ Hc + ridge_lambda * np.eye(H.shape[1])
    readout = np.linalg.solve(A, Hc.T @ (bvp - y_mean))
    readout_bias = float(y_mean - h_mean @ readout)

    logger.debug(f"Fitted readout for {model.model_id} on {dataset.domain_id} ({len(train_subjects)} subjects)")
    return replace(
        normalized,
        model_id=model_id or model.model_id,
        readout=readout,
        readout_bias=readout_bias,
        train_domain_id=dataset.domain_id,
        ridge_lambda=float(ridge_lambda),
    )


def forward_collect(model: ToyModel, dataset: SyntheticDataset, subjects: Sequence[str]):
    """
    Run the model over subjects in (subject_id, frame) order

    Returns:
        (dict subject_id -> predicted BVP or None when untrained, ActivationSet)
    """
    records = dataset.select(subjects)
    if not records:
        raise SubjectLookupError(f"No subjects requested from {dataset.domain_id}")

    per_layer = [[] for _ in model.widths]
    predictions: Dict[str, Optional[np.ndarray]] = {}
    for record in records:
        hidden = model.hidden(record.features)
        for i, h in enumerate(hidden):
            per_layer[i].append(h)
        predictions[record.subject_id] = (
            hidden[-1] @ model.readout + model.readout_bias if model.trained else None
        )

    acts = ActivationSet(
        model_id=model.model_id,
        dataset_id=dataset.domain_id,
        layers=tuple(LayerActivations(name, np.vstack(parts))
                     for name, parts in zip(model.layer_names, per_layer)),
    )
    return predictions, acts


# --- persistence ---

def dataset_to_activation_set(dataset: SyntheticDataset) -> ActivationSet:
    """Features as an ActivationSet: one layer per subject"""
    return ActivationSet(
        model_id='features',
        dataset_id=dataset.domain_id,
        layers=tuple(LayerActivations(r.subject_id, r.features) for r in dataset.subjects),
    )


def truth_frame(dataset: SyntheticDataset) -> pd.DataFrame:
    """Ground-truth series in long form: subject_id, frame, bvp, hr_bpm"""
    frames = []
    for r in dataset.subjects:
        frames.append(pd.DataFrame({
            'subject_id': r.subject_id,
            'frame': np.arange(len(r.bvp)),
            'bvp': r.bvp,
            'hr_bpm': r.hr_bpm,
        }))
    return pd.concat(frames, ignore_index=True)


def dataset_from_parts(acts: ActivationSet, truth: pd.DataFrame, fps: float) -> SyntheticDataset:
    """Inverse of (dataset_to_activation_set, truth_frame)"""
    records = []
    for layer in acts.layers:
        rows = truth[truth['subject_id'] == layer.name].sort_values('frame')
        if len(rows) != layer.shape[0]:
            raise SubjectLookupError(
                f"Ground truth for {layer.name} has {len(rows)} frames, features have {layer.shape[0]}")
        records.append(SubjectRecord(
            subject_id=layer.name,
            features=np.asarray(layer.data, dtype=np.float64),
            bvp=rows['bvp'].to_numpy(dtype=np.float64),
            hr_bpm=rows['hr_bpm'].to_numpy(dtype=np.float64),
        ))
    return SyntheticDataset(acts.dataset_id, float(fps), tuple(records))


def model_to_dict(model: ToyModel) -> dict:
    """Trained state only; hidden weights are regenerated from the seed"""
    def listed(a):
        return None if a is None else [float(v) for v in a]

    return {
        'model_id': model.model_id,
        'widths': list(model.widths),
        'feature_dim': model.feature_dim,
        'seed': model.seed,
        'train_domain_id': model.train_domain_id,
        'ridge_lambda': model.ridge_lambda,
        'input_mean': listed(model.input_mean),
        'input_scale': listed(model.input_scale),
        'readout': listed(model.readout),
        'readout_bias': float(model.readout_bias),
    }


def model_from_dict(data: dict) -> ToyModel:
    model = build_toy_model(data['widths'], data['feature_dim'], data['seed'], model_id=data['model_id'])

    def arr(key):
        return None if data.get(key) is None else np.asarray(data[key], dtype=np.float64)

    return replace(
        model,
        input_mean=arr('input_mean'),
        input_scale=arr('input_scale'),
        readout=arr('readout'),
        readout_bias=float(data.get('readout_bias', 0.0)),
        train_domain_id=data.get('train_domain_id'),
        ridge_lambda=data.get('ridge_lambda'),
    )
