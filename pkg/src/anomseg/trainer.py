"""Training loop: config, schedules, batching, checkpoints, loss logging.

Every random decision after weight initialisation is drawn from a
generator seeded by ``(seed, purpose, counter)``: epoch order from the
epoch number, flips and contrastive sampling from the global iteration.
Resuming from a checkpoint therefore only needs the weights, optimizer
state and the iteration counter to replay the uninterrupted run.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import cacl
from .dissim_net import DissimNet, NetConfig, samples_to_batch
from .errors import CheckpointError, ConfigError
from .mdat import AdversarialOptions, DomainClassifier, SmoothingSchedule, adversarial_step
from .objective import total_loss
from .transforms import augment, normalize

__all__ = [
    "TrainConfig", "LossReport", "Trainer", "NetPredictor", "OraclePredictor", "poly_lr", "total_loss",
    "augment", "train_run", "save_checkpoint", "load_checkpoint", "load_predictor", "write_loss_csv",
    "read_loss_csv",
]

LOGGER = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "anomseg-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ("iteration", "tau", "lr", "L_CE", "L_MDA_f", "L_MDA_o", "L_CAC", "L_total", "L_D_f", "L_D_o",
                "n_V", "n_A")

# config-file spellings that differ from the python field name
_ALIASES = {"as": "anomaly_sampling"}


@dataclass
class TrainConfig:
    epochs: int = 50
    max_iters: int = 0  # 0: epochs x batches per epoch
    lr: float = 1e-4
    poly_power: float = 0.99
    batch_per_domain: int = 4
    train_domains: str = "VA"
    lambda_f: float = 0.04
    lambda_o: float = 0.06
    lambda_c: float = 0.1
    tau_base: float = 1.0
    n_anchor: int = 50
    pos_mult: int = 2
    hard_neg_mult: int = 2
    easy_neg_mult: int = 6
    alpha: float = 0.1
    hardness_threshold: float = 0.5
    oda: bool = True
    fda: bool = True
    dls: bool = True
    pcl: bool = False
    cpcl: bool = True
    anomaly_sampling: bool = True
    log_variant: bool = False
    positives_opposite: bool = False
    output_pool: int = 4
    num_levels: int = 3
    base_channels: int = 16
    norm_mode: str = "spatial_aware"
    seed: int = 0
    stop_at_iter: int = 0  # >0: stop after this many iterations (resumable)
    resume: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.train_domains not in ("VA", "V", "A"):
            raise ConfigError(f"train_domains must be 'VA', 'V' or 'A', got {self.train_domains!r}")
        for name in ("lambda_f", "lambda_o", "lambda_c"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("epochs", "batch_per_domain", "n_anchor", "pos_mult", "hard_neg_mult", "easy_neg_mult",
                     "output_pool"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_iters < 0 or self.stop_at_iter < 0:
            raise ConfigError("max_iters and stop_at_iter must be >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0.5 <= self.tau_base <= 1.0:
            raise ConfigError(f"tau_base must lie in [0.5, 1], got {self.tau_base}")
        if self.pcl and self.cpcl:
            raise ConfigError("pcl and cpcl are mutually exclusive")
        if self.train_domains != "VA" and (self.oda or self.fda or self.pcl or self.cpcl):
            raise ConfigError("oda/fda/pcl/cpcl need both training domains (train_domains='VA')")

    @property
    def contrastive(self) -> bool:
        return self.pcl or self.cpcl

    def budget(self) -> cacl.SamplingBudget:
        return cacl.SamplingBudget(self.n_anchor, self.pos_mult, self.hard_neg_mult, self.easy_neg_mult, self.alpha)

    def adversarial_options(self) -> AdversarialOptions:
        return AdversarialOptions(self.lambda_f, self.lambda_o, self.lambda_c, self.oda, self.fda, self.dls,
                                  self.pcl, self.cpcl, self.output_pool)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["as"] = d.pop("anomaly_sampling")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            name = _ALIASES.get(key, key)
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kw[name] = value
        return cls(**kw)

    def with_overrides(self, overrides) -> "TrainConfig":
        """Apply ``key=value`` strings, converting each value to the field's type."""
        d = self.to_dict()
        types = {f.name: f.type for f in fields(self)}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, raw = item.split("=", 1)
            key = key.strip()
            name = _ALIASES.get(key, key)
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            d[key] = _convert(raw.strip(), types[name], key)
        return TrainConfig.from_dict(d)


def _convert(raw: str, typ, key):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {typ}") from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        return TrainConfig.from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def poly_lr(i: int, max_i: int, base_lr: float, power: float) -> float:
    if not 0 <= i <= max_i:
        raise ValueError(f"iteration {i} outside [0, {max_i}]")
    return base_lr * (1 - i / max_i) ** power


@dataclass
class LossReport:
    iteration: int
    tau: float
    lr: float
    L_CE: float
    L_MDA_f: float
    L_MDA_o: float
    L_CAC: float
    L_total: float
    L_D_f: float
    L_D_o: float
    n_V: int
    n_A: int

    def row(self) -> list:
        return [repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(self)]


def write_loss_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in reports:
            w.writerow(r.row())


def read_loss_csv(path) -> list[LossReport]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(LossReport(**{k: (int(v) if k in ("iteration", "n_V", "n_A") else float(v))
                                     for k, v in row.items()}))
    return out


class NetPredictor:
    """Batched, gradient-free anomaly-probability prediction for samples."""

    def __init__(self, net: DissimNet, batch_size: int = 16):
        self.net = net
        self.batch_size = batch_size

    def predict(self, samples):
        was_training = self.net.training
        self.net.eval()
        out = []
        try:
            with torch.no_grad():
                for k in range(0, len(samples), self.batch_size):
                    chunk = [normalize(s) for s in samples[k:k + self.batch_size]]
                    b = samples_to_batch(chunk, self.net.cfg.num_classes)
                    res = self.net(b["image"], b["recon"], b["semantic"], b["uncertainty"])
                    out.extend(res.prob[:, 0].double().numpy())
        finally:
            self.net.train(was_training)
        return out


class OraclePredictor:
    """Scores each pixel with its own ground truth; a pipeline sanity reference."""

    def predict(self, samples):
        return [(s.gt_map == 1).astype(np.float64) for s in samples]


class Trainer:
    """Owns the network, domain classifiers, projector and both optimizers."""

    def __init__(self, cfg: TrainConfig, num_classes: int, height: int, width: int, max_iters: int):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.net_cfg = NetConfig(cfg.num_levels, cfg.base_channels, num_classes, height, width, cfg.norm_mode)
        self.net = DissimNet(self.net_cfg)
        self.d_feat = DomainClassifier("feature", self.net_cfg.channels(cfg.num_levels), stem=True)
        self.d_out = DomainClassifier("output", 1)
        self.projector = cacl.Projector(cfg.base_channels)
        self.model_opt = torch.optim.Adam(list(self.net.parameters()) + list(self.projector.parameters()), lr=cfg.lr)
        self.disc_opt = torch.optim.Adam(list(self.d_feat.parameters()) + list(self.d_out.parameters()), lr=cfg.lr)
        self.max_iters = max_iters
        self.sched = SmoothingSchedule(cfg.tau_base, max_iters)
        self.iteration = 0

    # -- state ----------------------------------------------------------

    def modules(self) -> dict:
        return {"net": self.net, "d_feat": self.d_feat, "d_out": self.d_out, "projector": self.projector}

    def state_dict(self) -> dict:
        state = {k: m.state_dict() for k, m in self.modules().items()}
        state["model_opt"] = self.model_opt.state_dict()
        state["disc_opt"] = self.disc_opt.state_dict()
        return state

    def load_state_dict(self, state: dict) -> None:
        for k, m in self.modules().items():
            m.load_state_dict(state[k])
        self.model_opt.load_state_dict(state["model_opt"])
        self.disc_opt.load_state_dict(state["disc_opt"])

    # -- one iteration --------------------------------------------------

    def _contrastive(self, batch, rng):
        cfg = self.cfg

        def fn(out):
            prob = out.prob.detach()[:, 0].double().numpy()
            gt = batch["gt"].numpy()
            parts = [cacl.partition_pixels(g, p, cfg.hardness_threshold) for g, p in zip(gt, prob)]
            sets = cacl.build_sample_sets(parts, batch["domain"], cfg.budget(), rng,
                                          anomaly_aware=cfg.anomaly_sampling, cross_domain=cfg.cpcl,
                                          positives_opposite=cfg.positives_opposite)
            emb = cacl.gather_embeddings(sets, out.decoder_features, self.projector)
            return cacl.cac_loss(emb["anchors"], emb["positives"], emb["negatives"], cfg.alpha, cfg.log_variant)

        return fn

    def step(self, samples) -> LossReport:
        cfg = self.cfg
        i = self.iteration
        rng = np.random.default_rng([cfg.seed, 23, i])
        prepared = [augment(s, rng) for s in samples]
        batch = samples_to_batch(prepared, self.net_cfg.num_classes)
        batch["domain"] = [s.domain for s in samples]
        lr = poly_lr(i, self.max_iters, cfg.lr, cfg.poly_power)
        for opt in (self.model_opt, self.disc_opt):
            for group in opt.param_groups:
                group["lr"] = lr
        # a zero-weight contrastive term is skipped entirely and logged as 0
        contrastive = self._contrastive(batch, rng) if cfg.contrastive and cfg.lambda_c > 0 else None
        rep = adversarial_step(self.net, self.d_feat, self.d_out, batch, i, self.sched, cfg.adversarial_options(),
                               self.model_opt, self.disc_opt, contrastive)
        self.iteration += 1
        return LossReport(
            iteration=i, tau=rep["tau"], lr=lr, L_CE=rep["L_CE"], L_MDA_f=rep["L_MDA_f"], L_MDA_o=rep["L_MDA_o"],
            L_CAC=rep["L_CAC"], L_total=rep["L_total"], L_D_f=rep["L_D_f"], L_D_o=rep["L_D_o"],
            n_V=batch["domain"].count("V"), n_A=batch["domain"].count("A"),
        )

    def predictor(self) -> NetPredictor:
        return NetPredictor(self.net)


# -- batching ---------------------------------------------------------


class BatchPlan:
    """Deterministic epoch-wise batching with equal per-domain shares."""

    def __init__(self, samples, cfg: TrainConfig):
        self.cfg = cfg
        self.by_domain = {d: [s for s in samples if s.domain == d] for d in cfg.train_domains}
        # a single-domain run keeps the full batch size from its one domain
        self.share = cfg.batch_per_domain * (2 if len(cfg.train_domains) == 1 else 1)
        for d, items in self.by_domain.items():
            if len(items) < self.share:
                raise ConfigError(
                    f"domain {d} has {len(items)} samples, fewer than its per-batch share {self.share}"
                )
        self.batches_per_epoch = min(len(v) for v in self.by_domain.values()) // self.share
        self._cache = {}

    def _perms(self, epoch):
        if epoch not in self._cache:
            rng = np.random.default_rng([self.cfg.seed, 17, epoch])
            self._cache = {epoch: {d: rng.permutation(len(v)) for d, v in self.by_domain.items()}}
        return self._cache[epoch]

    def batch(self, i: int) -> list:
        epoch, b = divmod(i, self.batches_per_epoch)
        perms = self._perms(epoch)
        out = []
        for d, items in self.by_domain.items():
            idx = perms[d][b * self.share:(b + 1) * self.share]
            out.extend(items[k] for k in idx)
        return out


# -- checkpoints ------------------------------------------------------


def save_checkpoint(trainer: Trainer, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_kind": "dissim_net",
        "net_config": trainer.net_cfg.to_dict(),
        "train_config": trainer.cfg.to_dict(),
        "iteration": trainer.iteration,
        "max_iters": trainer.max_iters,
        "state": trainer.state_dict(),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def save_oracle_checkpoint(path) -> None:
    torch.save({"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "model_kind": "oracle"}, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for corrupt files
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an anomseg checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    return payload


def trainer_from_checkpoint(payload: dict) -> Trainer:
    cfg = TrainConfig.from_dict(payload["train_config"])
    nc = payload["net_config"]
    tr = Trainer(cfg, nc["num_classes"], nc["height"], nc["width"], payload["max_iters"])
    tr.load_state_dict(payload["state"])
    tr.iteration = payload["iteration"]
    return tr


def load_predictor(path):
    payload = load_checkpoint(path)
    if payload.get("model_kind") == "oracle":
        return OraclePredictor()
    return trainer_from_checkpoint(payload).predictor()


# -- full run ---------------------------------------------------------


def train_run(samples, cfg: TrainConfig, out_dir=None, progress=None) -> tuple[Trainer, list[LossReport]]:
    """Train on ``samples`` (domains V and/or A) per ``cfg``.

    With ``out_dir`` the run writes ``config.json``, ``losses.csv``, one
    ``checkpoint_epochNNN.pt`` per finished epoch and ``checkpoint_last.pt``.
    """
    samples = [s for s in samples if s.domain in cfg.train_domains]
    if not samples:
        raise ConfigError(f"dataset has no samples of domains {cfg.train_domains!r}")
    plan = BatchPlan(samples, cfg)
    max_iters = cfg.max_iters or cfg.epochs * plan.batches_per_epoch
    h, w = samples[0].gt_map.shape
    num_classes = int(max(int(s.semantic_map.max()) for s in samples)) + 1
    reports: list[LossReport] = []
    if cfg.resume:
        payload = load_checkpoint(cfg.resume)
        if payload.get("model_kind") != "dissim_net":
            raise CheckpointError(f"cannot resume training from {cfg.resume}: not a network checkpoint")
        if payload["max_iters"] != max_iters:
            raise CheckpointError(
                f"checkpoint {cfg.resume} planned {payload['max_iters']} iterations, this run plans {max_iters}"
            )
        num_classes = payload["net_config"]["num_classes"]
        trainer = Trainer(cfg, num_classes, h, w, max_iters)
        trainer.load_state_dict(payload["state"])
        trainer.iteration = payload["iteration"]
        if out_dir is not None and (Path(out_dir) / "losses.csv").is_file():
            reports = [r for r in read_loss_csv(Path(out_dir) / "losses.csv") if r.iteration < trainer.iteration]
    else:
        trainer = Trainer(cfg, num_classes, h, w, max_iters)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        info = {"max_iters": max_iters, "batches_per_epoch": plan.batches_per_epoch, "num_classes": num_classes}
        (out / "run_info.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    stop = min(cfg.stop_at_iter or max_iters, max_iters)
    while trainer.iteration < stop:
        rep = trainer.step(plan.batch(trainer.iteration))
        reports.append(rep)
        if progress is not None:
            progress(rep)
        if out is not None and trainer.iteration % plan.batches_per_epoch == 0:
            epoch = trainer.iteration // plan.batches_per_epoch
            save_checkpoint(trainer, out / f"checkpoint_epoch{epoch:03d}.pt")
    if out is not None:
        save_checkpoint(trainer, out / "checkpoint_last.pt")
        write_loss_csv(reports, out / "losses.csv")
    return trainer, reports
