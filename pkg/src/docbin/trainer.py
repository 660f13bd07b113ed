"""SGD training loop with plateau learning-rate decay and validation model selection."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import numerics as nm
from .errors import DomainError, InvalidArgument
from .features import FeatureConfig, build_input_stack
from .imaging import CropPair, extract_crops
from .losses import LOSSES, batch_loss
from .metrics import pfm_metric
from .network import Network, NetworkSpec, build_network
from .weights import WeightMaps, pseudo_weights


@dataclass
class TrainConfig:
    loss: str = "pfm+fm"
    lr0: float = 1e-3
    batch: int = 10
    weight_decay: float = 5e-4
    clip_norm: float = 10.0
    lr_factor: float = 0.1
    plateau: float = 1.5          # epochs without improvement before a decay
    lr_floor: float = 1e-6
    jitter: float = 25 / 255
    crop: int = 256
    stride: int = 64
    seed: int = 0
    eval_interval: float = 0.5    # epochs between validation passes
    min_improvement: float = 1e-4
    max_epochs: Optional[int] = None

    def validate(self) -> None:
        if self.loss not in LOSSES:
            raise InvalidArgument(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        for name in ("lr0", "clip_norm", "plateau", "lr_floor", "eval_interval"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not 0 < self.lr_factor < 1:
            raise InvalidArgument(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.batch < 1 or self.crop < 1 or self.stride < 1:
            raise InvalidArgument("batch, crop and stride must be positive")
        if self.weight_decay < 0 or self.jitter < 0:
            raise InvalidArgument("weight_decay and jitter must be non-negative")
        ratio = self.plateau / self.eval_interval
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidArgument("plateau must be a whole number of eval intervals")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise InvalidArgument("max_epochs must be >= 1")

    @property
    def patience(self) -> int:
        return int(round(self.plateau / self.eval_interval))

    @classmethod
    def from_dict(cls, values: dict, base: Optional["TrainConfig"] = None) -> "TrainConfig":
        base = cls() if base is None else base
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, text in values.items():
            if key not in types:
                raise InvalidArgument(f"unknown training option {key!r}")
            cur = getattr(base, key)
            try:
                if key == "max_epochs":
                    kw[key] = None if str(text).lower() in ("", "none") else int(text)
                elif key == "loss":
                    kw[key] = str(text)
                elif isinstance(cur, int) and not isinstance(cur, bool):
                    kw[key] = int(text)
                else:
                    kw[key] = _parse_number(text)
            except ValueError:
                raise InvalidArgument(f"bad value for {key}: {text!r}") from None
        cfg = replace(base, **kw)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def _parse_number(text) -> float:
    text = str(text).strip()
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


def parse_kv(text: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_step: Optional[int] = None
    best_pfm: float = -math.inf

    FIELDS = ("event", "step", "epoch", "lr", "loss", "val_pfm", "best")

    def add(self, event, step, epoch, lr, loss=None, val_pfm=None, best=False):
        self.rows.append(dict(event=event, step=step, epoch=epoch, lr=lr, loss=loss,
                              val_pfm=val_pfm, best=best))

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows if r["event"] == "step"]

    def evals(self) -> list[tuple[int, float]]:
        return [(r["step"], r["val_pfm"]) for r in self.rows if r["event"] == "eval"]

    def lrs(self) -> list[float]:
        out = []
        for r in self.rows:
            if not out or r["lr"] != out[-1]:
                out.append(r["lr"])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for r in self.rows:
            w.writerow([
                r["event"], r["step"], f"{r['epoch']:.4f}", repr(float(r["lr"])),
                "" if r["loss"] is None else repr(float(r["loss"])),
                "" if r["val_pfm"] is None else repr(float(r["val_pfm"])),
                int(r["best"]),
            ])
        return buf.getvalue()


def color_jitter(x: np.ndarray, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Shift the gray channel (channel 0) of each sample by one uniform constant.

    Feature channels are left alone; the result is clamped to [0, 1].
    """
    if amplitude < 0:
        raise InvalidArgument("jitter amplitude must be non-negative")
    x = np.array(x, copy=True)
    single = x.ndim == 3
    xb = x[None] if single else x
    if amplitude > 0:
        c = rng.uniform(-amplitude, amplitude, size=xb.shape[0]).astype(xb.dtype)
        xb[:, 0] = np.clip(xb[:, 0] + c[:, None, None], 0, 1)
    return xb[0] if single else xb


def prepare_crops(image: np.ndarray, gt: np.ndarray, features: FeatureConfig,
                  size: int, stride: int, source: Optional[int] = None,
                  dtype=np.float32) -> list[CropPair]:
    """Input-stack crops of one page with its pseudo weight maps cropped alongside.

    Features and weights are computed on the whole page, so crop borders do
    not distort them. Crops with no weighted ink are dropped.
    """
    stack = build_input_stack(image, features).astype(dtype)
    gt = np.asarray(gt).astype(np.uint8)
    Wm = pseudo_weights(gt)
    crops = extract_crops(stack, gt, size, stride,
                          extras={"recall": Wm.recall, "precision": Wm.precision})
    keep = []
    for c in crops:
        if float(np.sum(c.extras["recall"] * c.mask)) > 0:
            c.source = source
            keep.append(c)
    return keep


def make_split(pairs: Sequence[tuple[np.ndarray, np.ndarray]], val_count: int,
               rng: np.random.Generator, features: Optional[FeatureConfig] = None,
               size: int = 256, stride: int = 64):
    """Image-level split into ``(train_crops, val_crops)``."""
    n = len(pairs)
    if val_count < 0 or val_count >= n:
        raise InvalidArgument(f"need more than {val_count} images for the split, got {n}")
    features = FeatureConfig() if features is None else features
    order = rng.permutation(n)
    val_ids = set(order[:val_count].tolist())
    train, val = [], []
    for i, (img, gt) in enumerate(pairs):
        crops = prepare_crops(img, gt, features, size, stride, source=i)
        (val if i in val_ids else train).extend(crops)
    return train, val


def _stack(crops: Sequence[CropPair]):
    x = np.stack([c.image for c in crops])
    g = np.stack([c.mask for c in crops]).astype(np.float64)
    w = [WeightMaps(c.extras["recall"], c.extras["precision"]) for c in crops]
    return x, g, w


def validation_pfm(net: Network, crops: Sequence[CropPair], batch: int = 16) -> float:
    """Mean P-FM of the thresholded predictions over the validation crops."""
    scores = []
    for k in range(0, len(crops), batch):
        part = crops[k:k + batch]
        y = net.predict(np.stack([c.image for c in part]))
        for c, p in zip(part, y):
            Wm = WeightMaps(c.extras["recall"], c.extras["precision"])
            scores.append(pfm_metric(p >= 0.5, c.mask, Wm))
    return float(np.mean(scores))


def _describe(c: CropPair) -> str:
    return f"image {c.source} offset {c.offset}"


def train(config: TrainConfig, train_crops: Sequence[CropPair], val_crops: Sequence[CropPair],
          spec: Optional[NetworkSpec] = None, features: Optional[FeatureConfig] = None,
          progress: Optional[Callable[[str], None]] = None):
    """Train one network; returns ``(best_network, log)``.

    The network seed follows ``config.seed`` so one number fixes both the
    initialisation and the batch order.
    """
    config.validate()
    if not train_crops or not val_crops:
        raise InvalidArgument("training and validation sets must be non-empty")
    for c in list(train_crops) + list(val_crops):
        if not c.mask.any():
            raise InvalidArgument(f"crop without foreground: {_describe(c)}")
    features = FeatureConfig() if features is None else features
    channels = train_crops[0].image.shape[0]
    if spec is None:
        spec = NetworkSpec(in_channels=channels)
    spec = replace(spec, seed=config.seed)
    if spec.in_channels != channels:
        raise InvalidArgument(f"crops have {channels} channels, network expects {spec.in_channels}")
    net = build_network(spec, features=features, dtype=train_crops[0].image.dtype)
    rng = np.random.default_rng(config.seed)
    exempt = net.bias_mask()

    n = len(train_crops)
    steps_per_epoch = math.ceil(n / config.batch)
    eval_every = max(1, int(round(config.eval_interval * steps_per_epoch)))
    log = TrainLog()
    best_params = [p.copy() for p in net.params()]
    lr = config.lr0
    stale = 0
    step = 0
    epoch = 0
    done = False

    def evaluate():
        nonlocal stale, lr, best_params, done
        score = validation_pfm(net, val_crops)
        improved = score > log.best_pfm + config.min_improvement or log.best_step is None
        if improved:
            log.best_pfm, log.best_step = score, step
            best_params = [p.copy() for p in net.params()]
            stale = 0
        else:
            stale += 1
        log.add("eval", step, step / steps_per_epoch, lr, val_pfm=score, best=improved)
        if progress:
            progress(f"step {step} epoch {step / steps_per_epoch:.2f} lr {lr:.1e} val P-FM {score:.3f}")
        if stale >= config.patience:
            stale = 0
            lr *= config.lr_factor
            log.add("lr", step, step / steps_per_epoch, lr)
            if lr <= config.lr_floor * (1 + 1e-6):
                done = True

    while not done:
        if config.max_epochs is not None and epoch >= config.max_epochs:
            break
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            batch = [train_crops[i] for i in order[k * config.batch:(k + 1) * config.batch]]
            x, g, w = _stack(batch)
            x = color_jitter(x, config.jitter, rng)
            y, cache = net.forward(x)
            try:
                res = batch_loss(config.loss, y.astype(np.float64), g, w)
            except DomainError as exc:
                bad = next((c for c in batch if not np.sum(c.extras["recall"] * c.mask) > 0),
                           batch[0])
                raise DomainError(f"loss undefined on training crop {_describe(bad)}: {exc}") from exc
            grads = net.backward(cache, res.grad.astype(net.dtype))
            grads = nm.clip_gradients(grads, config.clip_norm)
            net.set_params(nm.sgd_step(net.params(), grads, lr, config.weight_decay, exempt))
            step += 1
            log.add("step", step, step / steps_per_epoch, lr, loss=res.value)
            if step % eval_every == 0:
                evaluate()
                if done:
                    break
        epoch += 1
    if log.best_step is None:
        evaluate()
    net.set_params(best_params)
    return net, log


def train_ensemble(config: TrainConfig, train_crops, val_crops, n: int = 5,
                   spec: Optional[NetworkSpec] = None, features: Optional[FeatureConfig] = None,
                   progress=None):
    """``n`` independent runs with seeds ``config.seed + i``."""
    if n < 1:
        raise InvalidArgument(f"ensemble size must be >= 1, got {n}")
    nets, logs = [], []
    for i in range(n):
        cfg = replace(config, seed=config.seed + i)
        net, log = train(cfg, train_crops, val_crops, spec, features, progress)
        nets.append(net)
        logs.append(log)
    return nets, logs
