"""Run configuration: flat dotted-key text files plus the variant table.

Config files hold `key = value` lines, `#` comments, and nothing nested.
Unknown keys and uncoercible values raise ConfigError so typos fail fast.
The config hash covers the corpus.* and model.* keys, the ones that decide
artifact compatibility; train.* keys change the trajectory, not the shapes.
"""

from __future__ import annotations

import hashlib
import os

from .corpus import ToyGrammar
from .errors import ConfigError
from .learning import LossConfig, OptimizerConfig
from .model import ModelConfig

DEFAULTS = {
    "corpus.n_samples": 3000,
    "corpus.vocab_size": 40,
    "corpus.multi_intent_rate": 0.674,
    "corpus.max_target_len": 12,
    "corpus.max_src_len": 16,
    "corpus.noise_rate": 0.1,
    "corpus.domains": "hotel,restaurant,taxi",
    "corpus.partition": "domain",
    "corpus.split_train": 0.8438,
    "corpus.split_valid": 0.10,
    "corpus.split_test": 0.10,
    "model.emb_size": 8,
    "model.hidden_size": 16,
    "model.max_len": 20,
    "train.lambda": 0.5,
    "train.epochs": 10,
    "train.lr": 0.005,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.clip": 5.0,
    "train.l2": 1e-5,
    "train.batch_size": 64,
    "train.mu": "uniform",
    "train.validate_every": 1,
}

# variant -> (use_retro, use_prosp, lambda); the chair channel is always on
VARIANTS = {
    "mognet": (True, True, 0.5),
    "mognet-p": (True, False, 0.5),
    "mognet-p-r": (False, False, 0.5),
    "mognet-gl": (True, True, 0.0),
}

HASH_PREFIXES = ("corpus.", "model.")


def _coerce(key, raw, template):
    if isinstance(template, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e
    return raw.strip()


def parse_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, raw, DEFAULTS[key])
    return out


def preset_path(name):
    return os.path.join(os.path.dirname(__file__), "configs", name + ".cfg")


class RunConfig:
    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = _coerce(k, v, DEFAULTS[k]) if isinstance(v, str) else v
        part = self.values["corpus.partition"]
        if part not in ("domain", "action"):
            raise ConfigError(f"corpus.partition must be domain or action, got {part!r}")
        if not 0.0 <= self.values["train.lambda"] <= 1.0:
            raise ConfigError("train.lambda must lie in [0, 1]")

    @classmethod
    def load(cls, path=None, overrides=None):
        values = parse_config_file(path) if path else {}
        values.update(overrides or {})
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def config_hash(self):
        lines = [f"{k}={self.values[k]!r}" for k in sorted(self.values)
                 if k.startswith(HASH_PREFIXES)]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]

    # -- builders -------------------------------------------------------------

    def domains(self):
        doms = [d.strip() for d in self.values["corpus.domains"].split(",") if d.strip()]
        if not doms:
            raise ConfigError("corpus.domains is empty")
        return doms

    def grammar(self):
        try:
            return ToyGrammar(domains=self.domains(),
                              vocab_size=self.values["corpus.vocab_size"],
                              multi_intent_rate=self.values["corpus.multi_intent_rate"],
                              max_target_len=self.values["corpus.max_target_len"],
                              max_src_len=self.values["corpus.max_src_len"],
                              noise_rate=self.values["corpus.noise_rate"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def split_ratio(self):
        return (self.values["corpus.split_train"], self.values["corpus.split_valid"],
                self.values["corpus.split_test"])

    def model_config(self, vocab_size, n_experts, n_belief, n_db):
        return ModelConfig(vocab_size=vocab_size, n_experts=n_experts,
                           n_belief=n_belief, n_db=n_db,
                           emb_size=self.values["model.emb_size"],
                           hidden_size=self.values["model.hidden_size"],
                           max_src_len=self.values["corpus.max_src_len"],
                           max_len=self.values["model.max_len"])

    def loss_config(self, variant, lambda_=None):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        use_retro, use_prosp, table_lambda = VARIANTS[variant]
        if lambda_ is None:
            # the plain variant honors train.lambda; ablation rows pin theirs
            lambda_ = self.values["train.lambda"] if variant == "mognet" else table_lambda
        try:
            return LossConfig(lambda_=float(lambda_), use_retro=use_retro,
                              use_prosp=use_prosp, mu_mode=self.values["train.mu"])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def optimizer_config(self):
        try:
            return OptimizerConfig(lr=self.values["train.lr"],
                                   beta1=self.values["train.beta1"],
                                   beta2=self.values["train.beta2"],
                                   eps=self.values["train.eps"],
                                   clip=self.values["train.clip"],
                                   l2=self.values["train.l2"],
                                   batch_size=self.values["train.batch_size"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
