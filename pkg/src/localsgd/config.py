"""Flat ``key = value`` run configuration.

One assignment per line, ``#`` starts a comment. Every key has a default, so
a resolved config (``RunConfig.to_text``) is enough to replay a run.
"""

from __future__ import annotations

import dataclasses
import functools
import os
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from . import data as datamod
from .objectives import ConfigurationError, Objective, make_objective
from .optim import H_KINDS, LR_KINDS, MOMENTUM_STYLES, HSchedule, LrSchedule
from .simulator import CostModel, Trace, simulate
from .sync import CODECS, MOMENTUM_MODES, SyncPlan


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclasses.dataclass
class RunConfig:
    run_id: str = "run"
    # objective and data
    objective: str = "logistic"
    dataset: str = ""
    dataset_dim: int = 0
    eval_dataset: str = ""
    lam: str = "auto"
    quad_diag: Tuple[float, ...] = ()
    mlp_hidden: Tuple[int, ...] = (16, 16)
    init_seed: int = 0
    # topology and schedules
    K: int = 1
    blocks: int = 1
    B_loc: int = 16
    H: int = 1
    H_kind: str = "constant"
    switch_round: str = "auto"
    warmup_period: int = 1
    Hb: int = 1
    lr_kind: str = "constant"
    lr: float = 0.1
    lr_cap: float = 32.0
    milestones: Tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 10.0
    warmup_epochs: float = 5.0
    lr_scale: float = 1.0
    # local update and synchronization
    momentum: float = 0.0
    momentum_style: str = "none"
    momentum_mode: str = "local"
    global_momentum: float = 0.0
    weight_decay: float = 0.0
    codec: str = "exact"
    sign_after_momentum: bool = True
    average_buffers: bool = False
    # cost model
    t_grad: float = 1.0
    comm_ratio: float = 25.0
    comm_model: str = "flat"
    C1: float = 1.0
    C2: float = 25.0
    concurrent_blocks: bool = False
    delay: float = 0.0
    # run control
    seed: int = 1
    seeds: Tuple[int, ...] = (1, 2, 3)
    epochs: float = 1.0
    eval_every: str = "round"
    replacement: bool = False
    f_star: Optional[float] = None
    target_eps: float = 0.005
    track_average: bool = True
    grid_start: int = 0
    # not a key: directory that relative dataset paths resolve against
    base_dir: str = dataclasses.field(default=".", repr=False, compare=False)

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls) if f.name != "base_dir")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: Iterable[str]) -> "RunConfig":
        cfg = self
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"override {pair!r} is not key=value")
            cfg = cfg._set(key.strip(), value.strip())
        return cfg

    def _set(self, key: str, raw: str) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(self) if f.name != "base_dir"}
        if key not in fields:
            raise ConfigError(f"unknown key {key!r}")
        return dataclasses.replace(self, **{key: _convert(key, fields[key].type, raw)})

    def to_text(self) -> str:
        lines = []
        for key in self.keys():
            lines.append(f"{key} = {_render(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    def resolve_path(self, path: str) -> str:
        if not path or path.startswith("synthetic:") or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.base_dir, path))


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _convert(key: str, typ, raw: str):
    typ = str(typ)
    try:
        if typ == "bool":
            return _BOOL[raw.lower()]
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "Optional[float]":
            return None if raw in ("", "none", "None") else float(raw)
        if typ.startswith("Tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if typ.startswith("Tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    cfg = RunConfig(base_dir=base_dir)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            cfg = cfg._set(key, value.strip())
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


# -- building ------------------------------------------------------------------


@functools.lru_cache(maxsize=4)
def _load_dataset(spec: str, dim: int) -> datamod.Dataset:
    if spec.startswith("synthetic:"):
        parts = spec.split(":")[1:]
        name = parts[0]
        args = [int(p) for p in parts[1:]]
        if name == "two-class-2d":
            n, seed = (args + [2000, 0][len(args):])[:2]
            return datamod.make_two_class_2d(n, seed)
        if name == "sparse-binary":
            n, d, seed = (args + [5000, 300, 0][len(args):])[:3]
            return datamod.make_sparse_binary(n, d, seed=seed)
        raise ConfigError(f"unknown synthetic dataset {name!r}")
    if not os.path.exists(spec):
        raise ConfigError(f"dataset not found: {spec}")
    return datamod.load_libsvm(spec, d=dim or None)


def load_dataset(cfg: RunConfig, which: str = "dataset") -> Optional[datamod.Dataset]:
    spec = cfg.resolve_path(getattr(cfg, which))
    if not spec:
        return None
    return _load_dataset(spec, cfg.dataset_dim)


def validate(cfg: RunConfig):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.objective in ("logistic", "logistic-l2", "quadratic", "mlp"), f"unknown objective {cfg.objective!r}")
    need(cfg.objective == "quadratic" or cfg.dataset, f"objective {cfg.objective} needs a dataset")
    need(cfg.objective != "quadratic" or cfg.quad_diag, "quadratic objective needs quad_diag")
    need(cfg.K >= 1 and cfg.B_loc >= 1 and cfg.H >= 1 and cfg.Hb >= 1, "K, B_loc, H, Hb must be >= 1")
    need(cfg.blocks >= 1 and cfg.K % cfg.blocks == 0, f"K={cfg.K} not divisible by blocks={cfg.blocks}")
    need(cfg.H_kind in H_KINDS, f"unknown H_kind {cfg.H_kind!r}")
    need(cfg.lr_kind in LR_KINDS, f"unknown lr_kind {cfg.lr_kind!r}")
    need(cfg.momentum_style in MOMENTUM_STYLES, f"unknown momentum_style {cfg.momentum_style!r}")
    need(cfg.momentum_mode in MOMENTUM_MODES, f"unknown momentum_mode {cfg.momentum_mode!r}")
    need(cfg.codec in CODECS, f"unknown codec {cfg.codec!r}")
    need(cfg.comm_model in ("flat", "log"), f"unknown comm_model {cfg.comm_model!r}")
    need(cfg.eval_every in ("round", "epoch"), "eval_every must be round or epoch")
    need(cfg.lr > 0 and cfg.epochs > 0, "lr and epochs must be positive")
    need(0 <= cfg.momentum < 1 and 0 <= cfg.global_momentum < 1, "momentum must be in [0, 1)")
    need((cfg.momentum == 0) == (cfg.momentum_style == "none"),
         "momentum_style none goes with momentum 0 and vice versa")
    need(cfg.momentum_mode != "global" or cfg.momentum == 0,
         "momentum_mode global uses plain local steps; use hybrid with local momentum")
    need(all(0 < m <= 1 for m in cfg.milestones), "milestones are fractions of the budget")
    if cfg.switch_round != "auto":
        need(cfg.switch_round.isdigit(), "switch_round must be auto or a round index")
    if cfg.H_kind == "post-local" and cfg.switch_round == "auto":
        need(cfg.lr_kind in ("step-decay", "warmup-then-step") and cfg.milestones,
             "post-local with switch_round = auto needs a decaying lr schedule")
    need(cfg.lam == "auto" or _is_float(cfg.lam), "lam must be auto or a number")


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


@dataclasses.dataclass
class Run:
    config: RunConfig
    objective: Objective
    data: Optional[datamod.Dataset]
    eval_data: Optional[datamod.Dataset]
    plan: SyncPlan
    lr_schedule: LrSchedule
    cost: CostModel
    budget: int
    w0: np.ndarray

    def run(self, seed: Optional[int] = None) -> Trace:
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        return simulate(self.objective, self.data, self.plan, self.lr_schedule, self.cost,
                        self.budget, cfg.B_loc, seed=seed, w0=self.w0, f_star=cfg.f_star,
                        momentum=cfg.momentum, momentum_style=cfg.momentum_style,
                        weight_decay=cfg.weight_decay, replacement=cfg.replacement,
                        eval_every=cfg.eval_every, track_average=cfg.track_average,
                        eval_data=self.eval_data, run_id=cfg.run_id)


def build_objective(cfg: RunConfig, data: Optional[datamod.Dataset]) -> Objective:
    if cfg.lam == "auto":
        lam = 1.0 / data.N if cfg.objective.startswith("logistic") and data is not None else 0.0
    else:
        lam = float(cfg.lam)
    try:
        return make_objective(cfg.objective, data, lam=lam, diag=cfg.quad_diag or None,
                              hidden=cfg.mlp_hidden)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc


def build_run(cfg: RunConfig) -> Run:
    validate(cfg)
    data = load_dataset(cfg)
    eval_data = load_dataset(cfg, "eval_dataset")
    N = data.N if data is not None else 1
    if cfg.K > N:
        raise ConfigError(f"K={cfg.K} exceeds dataset size {N}")
    objective = build_objective(cfg, data)
    switch = None if cfg.switch_round == "auto" else int(cfg.switch_round)
    h_sched = HSchedule(cfg.H_kind, cfg.H, switch, cfg.warmup_period)
    plan = SyncPlan(cfg.K, cfg.blocks, h_sched, cfg.Hb, cfg.momentum_mode, cfg.global_momentum,
                    cfg.codec, cfg.sign_after_momentum, cfg.average_buffers)
    lr_schedule = LrSchedule(cfg.lr_kind, cfg.lr, cfg.lr_cap, N, cfg.milestones, cfg.decay_factor,
                             cfg.warmup_epochs, cfg.lr_scale)
    cost = CostModel(cfg.t_grad, cfg.comm_ratio, cfg.comm_model, cfg.C1, cfg.C2, cfg.delay,
                     cfg.concurrent_blocks)
    budget = int(round(cfg.epochs * N))
    if budget < 1:
        raise ConfigError("budget rounds to zero samples")
    w0 = objective.init_params(cfg.init_seed)
    return Run(cfg, objective, data, eval_data, plan, lr_schedule, cost, budget, w0)


def as_dict(cfg: RunConfig) -> Dict[str, object]:
    return {k: getattr(cfg, k) for k in cfg.keys()}
