"""Run configuration: defaults, config-file merging, flag overrides, provenance.

Precedence is flags > config file > defaults. The fully resolved
configuration is serialized next to every command's outputs so any run
can be reproduced bit-exactly from its own provenance record. The JSON
schema mirrors the dataclass layout::

    {
      "seed": 0, "data": null, "out": "run_out",
      "k": 32, "mode": null, "stage1": true, "stage2": true,
      "distill": {"hidden_dim", "epochs", "lr", "momentum", "allow_small_bags"},
      "rff":     {"m", "seed"},
      "decorr":  {"mode", "steps", "lr", "inprod_symmetric"},
      "bank":    {"t", "update_rule", "warmup"},
      "agg":     {"variant", "attn_dim", "mlp_dim", "epochs", "lr"},
      "synth":   {"n_bags_train", "n_bags_test", "k_min", "k_max", "n",
                  "pos_fraction", "cluster_sep", "confound_strength",
                  "confound_flip", "seed"}
    }

``rff.seed`` and ``synth.seed`` default to the root seed when null.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SyntheticConfig
from .errors import ConfigError


@dataclass
class DistillOptions:
    hidden_dim: int = 128
    epochs: int = 15
    lr: float = 1e-3
    momentum: float = 0.9
    allow_small_bags: bool = True


@dataclass
class RFFOptions:
    m: int = 1
    seed: int | None = None


@dataclass
class DecorrOptions:
    mode: str = "both"
    steps: int = 20
    lr: float = 0.5
    inprod_symmetric: bool = False


@dataclass
class BankOptions:
    t: int = 8
    update_rule: str = "all"
    warmup: bool = False


@dataclass
class AggOptions:
    variant: str = "gated_attention"
    attn_dim: int = 64
    mlp_dim: int = 64
    epochs: int = 15
    lr: float = 1e-3


@dataclass
class SynthOptions:
    n_bags_train: int = 200
    n_bags_test: int = 100
    k_min: int = 100
    k_max: int = 300
    n: int = 64
    pos_fraction: float = 0.1
    cluster_sep: float = 3.0
    confound_strength: float = 2.0
    confound_flip: bool = True
    seed: int | None = None

    def to_synthetic_config(self, root_seed: int) -> SyntheticConfig:
        return SyntheticConfig(
            n_bags_train=self.n_bags_train,
            n_bags_test=self.n_bags_test,
            k_range=(self.k_min, self.k_max),
            n=self.n,
            pos_fraction=self.pos_fraction,
            cluster_sep=self.cluster_sep,
            confound_strength=self.confound_strength,
            confound_flip=self.confound_flip,
            seed=root_seed if self.seed is None else self.seed,
        )


@dataclass
class RunConfig:
    seed: int = 0
    data: str | None = None
    out: str = "run_out"
    k: int = 32
    mode: str | None = None
    stage1: bool = True
    stage2: bool = True
    distill: DistillOptions = field(default_factory=DistillOptions)
    rff: RFFOptions = field(default_factory=RFFOptions)
    decorr: DecorrOptions = field(default_factory=DecorrOptions)
    bank: BankOptions = field(default_factory=BankOptions)
    agg: AggOptions = field(default_factory=AggOptions)
    synth: SynthOptions = field(default_factory=SynthOptions)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data.pop("invocation", None)
        groups = {
            "distill": DistillOptions,
            "rff": RFFOptions,
            "decorr": DecorrOptions,
            "bank": BankOptions,
            "agg": AggOptions,
            "synth": SynthOptions,
        }
        kwargs = {}
        top_fields = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in top_fields:
                raise ConfigError(f"unknown config key {key!r}")
            if key in groups:
                group_cls = groups[key]
                names = {f.name for f in dataclasses.fields(group_cls)}
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                unknown = set(value) - names
                if unknown:
                    raise ConfigError(f"unknown config key {key}.{sorted(unknown)[0]}")
                kwargs[key] = group_cls(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def resolve(cls, config_path: str | None = None, overrides: dict | None = None) -> "RunConfig":
        """Defaults, then config file, then dotted-path overrides."""
        if config_path is not None:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON ({exc})")
            cfg = cls.from_dict(data)
        else:
            cfg = cls()
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            cfg._set_dotted(dotted, value)
        cfg.validate()
        return cfg

    def _set_dotted(self, dotted: str, value) -> None:
        parts = dotted.split(".")
        target = self
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config key {dotted!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(target, leaf, value)

    # -- validation and derived views ----------------------------------------

    def validate(self) -> "RunConfig":
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.mode not in (None, "topk", "bipolar"):
            raise ConfigError("mode must be topk, bipolar, or null")
        if self.decorr.mode not in ("cov", "inprod", "both"):
            raise ConfigError("decorr.mode must be cov, inprod, or both")
        if self.bank.update_rule not in ("all", "drawn"):
            raise ConfigError("bank.update_rule must be all or drawn")
        if self.agg.variant not in ("gated_attention", "max_pool", "mean_pool"):
            raise ConfigError("agg.variant must be gated_attention, max_pool, or mean_pool")
        for name, value in (
            ("distill.epochs", self.distill.epochs),
            ("agg.epochs", self.agg.epochs),
            ("decorr.steps", self.decorr.steps),
            ("bank.t", self.bank.t),
            ("rff.m", self.rff.m),
        ):
            if int(value) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.data is None:
            self.synthetic_config()  # runs SyntheticConfig validation
        return self

    def synthetic_config(self) -> SyntheticConfig:
        return self.synth.to_synthetic_config(self.seed).validate()

    def estimator_kwargs(self) -> dict:
        return dict(
            k=self.k,
            mode=self.mode,
            hidden_dim=self.distill.hidden_dim,
            epochs_stage1=self.distill.epochs,
            lr_stage1=self.distill.lr,
            momentum=self.distill.momentum,
            rff_m=self.rff.m,
            rff_seed=self.rff.seed,
            decorr_mode=self.decorr.mode,
            decorr_steps=self.decorr.steps,
            decorr_lr=self.decorr.lr,
            inprod_symmetric=self.decorr.inprod_symmetric,
            bank_t=self.bank.t,
            bank_update=self.bank.update_rule,
            bank_warmup=self.bank.warmup,
            agg_variant=self.agg.variant,
            agg_attn_dim=self.agg.attn_dim,
            agg_mlp_dim=self.agg.mlp_dim,
            epochs_stage2=self.agg.epochs,
            lr_stage2=self.agg.lr,
            stage1=self.stage1,
            stage2=self.stage2,
            allow_small_bags=self.distill.allow_small_bags,
            seed=self.seed,
        )

    def config_hash(self) -> str:
        """Provenance hash of everything that shapes results (the output path does not)."""
        data = self.to_dict()
        data["out"] = None
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def write(self, path, invocation: dict | None = None) -> None:
        data = self.to_dict()
        if invocation:
            data["invocation"] = invocation
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
