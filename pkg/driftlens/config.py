import os
from dataclasses import dataclass, field
from typing import List, Optional

import yaml
from dotenv import load_dotenv

from .exceptions import SpecError

# Load environment variables from .env file
load_dotenv()

LOG_LEVEL = os.getenv('DRIFTLENS_LOG_LEVEL', 'INFO')
LOG_DIR = os.getenv('DRIFTLENS_LOG_DIR', 'logs')
LOG_FORMAT = os.getenv('DRIFTLENS_LOG_FORMAT', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')
LOG_TO_FILE = os.getenv('DRIFTLENS_LOG_TO_FILE', 'False').lower() == 'true'

SELECTION_MODES = ('per_fold', 'fold_mean')
# which subjects of each dataset feed the CKA analyses
CKA_SAMPLES = ('test', 'all')


class Config:
    """Process-level configuration read from the environment"""

    def __init__(self):
        # Parallelism
        self.THREADS = int(os.getenv('DRIFTLENS_THREADS', os.cpu_count() or 1))

        # Logging
        self.LOG_LEVEL = LOG_LEVEL
        self.LOG_DIR = LOG_DIR
        self.LOG_TO_FILE = LOG_TO_FILE

    def validate(self):
        """Validate configuration"""
        errors = []

        if self.THREADS < 1:
            errors.append(f"DRIFTLENS_THREADS must be >= 1, got {self.THREADS}")

        if self.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"DRIFTLENS_LOG_LEVEL is not a logging level: {self.LOG_LEVEL}")

        return errors

    def __str__(self):
        return f"""
Process Configuration:
- Threads: {self.THREADS}
- Log level: {self.LOG_LEVEL}
- Log dir: {self.LOG_DIR} (file logging {'on' if self.LOG_TO_FILE else 'off'})
"""


@dataclass(frozen=True)
class DomainSpec:
    """Knobs of one synthetic rPPG-like domain"""
    domain_id: str
    subjects: int = 20
    clip_seconds: float = 30.0
    fps: float = 30.0
    hr_mean: float = 80.0
    hr_stddev: float = 5.0
    noise_level: float = 0.0
    illumination_offset: float = 0.0
    feature_dim: int = 8
    seed: int = 0
    # shared "camera": domains generated with the same mixing_seed share their source mixing
    mixing_seed: int = 0
    # in-band interferer each in-domain readout learns to cancel
    confound_amplitude: float = 0.0
    # rotation of the mixed signal along one fixed path in feature space; shift grows with the angle difference
    sensor_angle: float = 0.0

    def validate(self) -> List[str]:
        errors = []
        if not self.domain_id:
            errors.append("domain_id must be non-empty")
        if self.subjects < 5:
            errors.append(f"{self.domain_id}: subjects must be >= 5, got {self.subjects}")
        if self.fps <= 0:
            errors.append(f"{self.domain_id}: fps must be > 0, got {self.fps}")
        if self.clip_seconds <= 0:
            errors.append(f"{self.domain_id}: clip_seconds must be > 0, got {self.clip_seconds}")
        elif int(self.clip_seconds * self.fps) < 1:
            errors.append(f"{self.domain_id}: clip shorter than one frame")
        if not 40.0 <= self.hr_mean <= 180.0:
            errors.append(f"{self.domain_id}: hr_mean must lie in [40, 180] BPM, got {self.hr_mean}")
        if self.hr_stddev < 0:
            errors.append(f"{self.domain_id}: hr_stddev must be >= 0, got {self.hr_stddev}")
        elif self.hr_mean - 3 * self.hr_stddev < 40.0 or self.hr_mean + 3 * self.hr_stddev > 180.0:
            errors.append(f"{self.domain_id}: hr_mean ± 3·hr_stddev leaves [40, 180] BPM")
        if self.noise_level < 0:
            errors.append(f"{self.domain_id}: noise_level must be >= 0, got {self.noise_level}")
        if self.confound_amplitude < 0:
            errors.append(f"{self.domain_id}: confound_amplitude must be >= 0, got {self.confound_amplitude}")
        if self.feature_dim < 4:
            errors.append(f"{self.domain_id}: feature_dim must be >= 4, got {self.feature_dim}")
        if self.seed < 0 or self.mixing_seed < 0:
            errors.append(f"{self.domain_id}: seeds must be non-negative")
        return errors

    @property
    def frames(self) -> int:
        return int(self.clip_seconds * self.fps)


def _optional_int(value) -> Optional[int]:
    return None if value is None else int(value)


@dataclass
class RunConfig:
    """Run-level configuration, loaded from a YAML document"""
    domains: List[DomainSpec] = field(default_factory=list)
    seed: int = 0
    out_dir: str = 'runs/default'
    fold_count: int = 5
    widths: List[int] = field(default_factory=lambda: [32] * 6)
    arch_seed: Optional[int] = None
    ridge_lambda: float = 1e-3
    normalize_inputs: bool = True
    estimator: str = 'unbiased'
    batch_size: int = 64
    cka_samples: str = 'test'
    # one fold split for every domain instead of per-domain splits
    fold_seed: Optional[int] = None
    window_s: float = 10.0
    hop_s: float = 1.0
    pad_factor: int = 4
    correlation_include_self: bool = True
    alpha: float = 0.05
    selection_include_self: bool = False
    selection_mode: str = 'per_fold'

    @property
    def model_seed(self) -> int:
        return self.seed if self.arch_seed is None else self.arch_seed

    @property
    def domain_ids(self) -> List[str]:
        return [d.domain_id for d in self.domains]

    def domain(self, domain_id: str) -> DomainSpec:
        for spec in self.domains:
            if spec.domain_id == domain_id:
                return spec
        raise KeyError(domain_id)

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        data = dict(data or {})
        arch = data.pop('architecture', {}) or {}
        training = data.pop('training', {}) or {}
        cka = data.pop('cka', {}) or {}
        stft = data.pop('stft', {}) or {}
        correlation = data.pop('correlation', {}) or {}
        selection = data.pop('selection', {}) or {}
        domains = data.pop('domains', []) or []
        seed = int(data.pop('seed', 0))

        specs = []
        for i, entry in enumerate(domains):
            entry = dict(entry)
            # unseeded domains get distinct seeds derived from the global seed
            entry.setdefault('seed', seed * 1000 + i)
            try:
                specs.append(DomainSpec(**entry))
            except TypeError as e:
                raise SpecError(f"Invalid domain entry #{i}: {e}")

        known = {'out_dir', 'fold_count', 'subjects_per_fold_seed'}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"Unknown configuration keys: {sorted(unknown)}")

        return cls(
            domains=specs,
            seed=seed,
            out_dir=str(data.get('out_dir', 'runs/default')),
            fold_count=int(data.get('fold_count', 5)),
            fold_seed=_optional_int(data.get('subjects_per_fold_seed')),
            widths=[int(w) for w in arch.get('widths', [32] * 6)],
            arch_seed=arch.get('seed'),
            ridge_lambda=float(training.get('ridge_lambda', 1e-3)),
            normalize_inputs=bool(training.get('normalize_inputs', True)),
            estimator=str(cka.get('estimator', 'unbiased')),
            batch_size=int(cka.get('batch_size', 64)),
            cka_samples=str(cka.get('samples', 'test')),
            window_s=float(stft.get('window_s', 10.0)),
            hop_s=float(stft.get('hop_s', 1.0)),
            pad_factor=int(stft.get('pad_factor', 4)),
            correlation_include_self=bool(correlation.get('include_self', True)),
            alpha=float(correlation.get('alpha', 0.05)),
            selection_include_self=bool(selection.get('include_self', False)),
            selection_mode=str(selection.get('mode', 'per_fold')),
        )

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> 'RunConfig':
        """
        Load a run configuration

        Args:
            path: YAML file
            seed (int): overrides the document's global seed before domain seeds are derived

        Returns:
            RunConfig
        """
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise SpecError(f"{path}: top level must be a mapping")
        if seed is not None:
            data['seed'] = seed
        return cls.from_dict(data)

    def validate(self):
        """Validate configuration"""
        from .cka import ESTIMATORS

        errors = []

        ids = self.domain_ids
        if not ids:
            errors.append("At least one domain is required")
        duplicates = sorted({d for d in ids if ids.count(d) > 1})
        if duplicates:
            errors.append(f"Duplicate domain ids: {duplicates}")
        for spec in self.domains:
            errors.extend(spec.validate())
        feature_dims = sorted({d.feature_dim for d in self.domains})
        if len(feature_dims) > 1:
            errors.append(f"All domains must share one feature_dim (one model architecture), got {feature_dims}")

        if len(self.widths) < 2:
            errors.append(f"architecture.widths needs >= 2 layers, got {len(self.widths)}")
        if any(w < 1 for w in self.widths):
            errors.append(f"architecture.widths must be >= 1: {self.widths}")

        min_subjects = min((d.subjects for d in self.domains), default=0)
        if self.fold_count < 2:
            errors.append(f"fold_count must be >= 2, got {self.fold_count}")
        elif self.domains and self.fold_count > min_subjects:
            errors.append(f"fold_count {self.fold_count} exceeds smallest subject count {min_subjects}")

        if self.ridge_lambda <= 0:
            errors.append(f"training.ridge_lambda must be > 0, got {self.ridge_lambda}")
        if self.estimator not in ESTIMATORS:
            errors.append(f"cka.estimator must be one of {ESTIMATORS}, got {self.estimator}")
        if self.cka_samples not in CKA_SAMPLES:
            errors.append(f"cka.samples must be one of {CKA_SAMPLES}, got {self.cka_samples}")
        if self.fold_seed is not None and self.fold_seed < 0:
            errors.append(f"subjects_per_fold_seed must be non-negative, got {self.fold_seed}")
        if self.batch_size < 2 or (self.estimator == 'unbiased' and self.batch_size < 4):
            errors.append(f"cka.batch_size too small for {self.estimator} estimator: {self.batch_size}")
        if self.window_s <= 0 or self.hop_s <= 0:
            errors.append("stft.window_s and stft.hop_s must be > 0")
        if self.pad_factor < 1:
            errors.append(f"stft.pad_factor must be >= 1, got {self.pad_factor}")
        for spec in self.domains:
            if self.window_s * spec.fps > spec.frames:
                errors.append(f"{spec.domain_id}: clip shorter than the {self.window_s}s STFT window")
        if not 0 < self.alpha < 1:
            errors.append(f"correlation.alpha must lie in (0, 1), got {self.alpha}")
        if self.selection_mode not in SELECTION_MODES:
            errors.append(f"selection.mode must be one of {SELECTION_MODES}, got {self.selection_mode}")

        return errors

    def __str__(self):
        """String representation of the run configuration"""
        return f"""
Run Configuration:
- Output: {self.out_dir}
- Seed: {self.seed}
- Domains ({len(self.domains)}): {', '.join(self.domain_ids)}
- Folds: {self.fold_count} (split seed {'per domain' if self.fold_seed is None else self.fold_seed})

Model:
- Widths: {self.widths}
- Ridge lambda: {self.ridge_lambda}
- Input normalization: {'on' if self.normalize_inputs else 'off'}

CKA:
- Estimator: {self.estimator}
- Batch size: {self.batch_size}
- Samples: {self.cka_samples}

STFT:
- Window: {self.window_s}s, hop {self.hop_s}s, pad x{self.pad_factor}
"""
