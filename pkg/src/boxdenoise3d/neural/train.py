"""Training and inference loops over :class:`ProposalSet` lists."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .. import tnsr
from ..errors import ConfigError
from ..geom3d import Box3D
from ..matchcost import assign_from_matrix
from ..sampler import NORM
from .data import ProposalSet
from .losses import LossConfig, total_loss
from .model import ModelConfig, Verifier, predict_scene
from .optim import OptimConfig, lr_at_epoch, make_optimizer, set_lr
from .refine import refine_all, select_predictions

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 24
    batch_size: int = 16
    seed: int = 0
    dtype: str = "float32"
    lambda1: float = 2.0  # class term of the matching cost
    grad_clip: Optional[float] = 1.0

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    cls: float
    size: float
    loc: float
    seconds: float


@dataclass
class TrainResult:
    model: Verifier
    history: list[EpochLog] = field(default_factory=list)


def _batch_tensors(batch: Sequence[ProposalSet], dtype):
    t = lambda xs: torch.as_tensor(np.concatenate(xs, axis=0), dtype=dtype)  # noqa: E731
    return t([s.geo for s in batch]), t([s.pt for s in batch]), t([s.roi for s in batch]), [len(s) for s in batch]


def match_batch(batch: Sequence[ProposalSet], y: torch.Tensor, lambda1: float) -> dict:
    """Assign ground truths to proposals scene by scene and build regression targets."""
    probs = torch.softmax(y.detach(), dim=-1).double().numpy()
    pos, labels, dp, dd = [], [], [], []
    off = 0
    for s in batch:
        n = len(s)
        if len(s.gt_labels) and n:
            cols = assign_from_matrix(s.geo_cost, probs[off : off + n], s.gt_labels, lambda1)
            pos.append(off + cols)
            labels.append(s.gt_labels)
            dp.append((s.gt_centers - s.centers[cols]) / NORM)
            dd.append(s.gt_dims - s.dims[cols])
        off += n
    cat = lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape)  # noqa: E731
    return {
        "pos": torch.as_tensor(cat(pos, (0,)), dtype=torch.long),
        "labels": torch.as_tensor(cat(labels, (0,)), dtype=torch.long),
        "dp": torch.as_tensor(cat(dp, (0, 3)), dtype=y.dtype),
        "dd": torch.as_tensor(cat(dd, (0, 3)), dtype=y.dtype),
    }


def train(
    samples: Sequence[ProposalSet],
    model_cfg: ModelConfig,
    loss_cfg: LossConfig = LossConfig(),
    optim_cfg: OptimConfig = OptimConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    on_epoch: Optional[Callable[[int, Verifier, EpochLog], None]] = None,
) -> TrainResult:
    dtype = _DTYPES[train_cfg.dtype]
    torch.manual_seed(train_cfg.seed)
    model = Verifier(model_cfg).to(dtype)
    opt = make_optimizer(model, optim_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    usable = [s for s in samples if len(s)]
    result = TrainResult(model)
    for epoch in range(train_cfg.epochs):
        lr = lr_at_epoch(optim_cfg, epoch)
        set_lr(opt, lr)
        model.train()
        order = rng.permutation(len(usable))
        t0 = time.perf_counter()
        sums = np.zeros(4)
        nb = 0
        for b in range(0, len(order), train_cfg.batch_size):
            batch = [usable[i] for i in order[b : b + train_cfg.batch_size]]
            geo, pt, roi, counts = _batch_tensors(batch, dtype)
            out = model(geo, pt, roi, counts)
            targets = match_batch(batch, out[0], train_cfg.lambda1)
            loss, parts = total_loss(out, targets, loss_cfg)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            sums += [loss.item(), parts["cls"], parts["size"], parts["loc"]]
            nb += 1
        m = sums / max(nb, 1)
        entry = EpochLog(epoch, lr, *map(float, m), time.perf_counter() - t0)
        result.history.append(entry)
        log.info("epoch %d lr %.2e loss %.4f (cls %.4f size %.4f loc %.4f) %.1fs", epoch, lr, *m, entry.seconds)
        if on_epoch is not None:
            on_epoch(epoch, model, entry)
    model.eval()
    return result


def infer(model: Verifier, s: ProposalSet, k: int = 3, threshold: float = 0.03) -> list[Box3D]:
    """Refined, selected boxes for one proposal set."""
    if not len(s):
        return []
    dtype = next(model.parameters()).dtype
    model.eval()
    y, dp, dd = predict_scene(model, s.geo, s.pt.astype(np.float64), s.roi.astype(np.float64), dtype=dtype)
    refined = refine_all(s.proposal_boxes(), y, dp, dd)
    return select_predictions(refined, s.anchor_index, s.anchor_scores, k, threshold)


def top1_boxes(model: Verifier, s: ProposalSet) -> dict[int, Box3D]:
    """Highest-scoring refined box per anchor, keyed by anchor index."""
    if not len(s):
        return {}
    dtype = next(model.parameters()).dtype
    y, dp, dd = predict_scene(model, s.geo, s.pt.astype(np.float64), s.roi.astype(np.float64), dtype=dtype)
    refined = refine_all(s.proposal_boxes(), y, dp, dd)
    best: dict[int, int] = {}
    for i, a in enumerate(s.anchor_index):
        a = int(a)
        if a not in best or refined[i].head_score > refined[best[a]].head_score:
            best[a] = i
    return {a: refined[i].box for a, i in best.items()}


def center_errors(model: Verifier, s: ProposalSet) -> np.ndarray:
    """``(A, 2)`` rows of (raw anchor, top-1 refined) center error in meters.

    Each anchor is paired with the ground truth whose center is nearest to
    the raw anchor; anchors in scenes without ground truth are skipped.
    """
    if not len(s) or not len(s.gt_centers):
        return np.zeros((0, 2))
    top = top1_boxes(model, s)
    rows = []
    for a, anchor in enumerate(s.anchors):
        if a not in top:
            continue
        d = np.linalg.norm(s.gt_centers - np.asarray(anchor.center), axis=1)
        g = s.gt_centers[int(np.argmin(d))]
        rows.append((float(d.min()), float(np.linalg.norm(np.asarray(top[a].center) - g))))
    return np.array(rows).reshape(-1, 2)


# checkpoints: parameters as concatenated TNSR records plus a JSON manifest


def save_checkpoint(model: Verifier, path, extra: Optional[dict] = None) -> None:
    path = Path(path)
    state = model.state_dict()
    names = sorted(state)
    with open(path.with_suffix(".tnsr"), "wb") as f:
        for name in names:
            tnsr.write_tensor(f, state[name].detach().double().numpy(), "<f8")
    manifest = {
        "model": model.cfg.to_dict(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "params": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "extra": extra or {},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path) -> Verifier:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    model = Verifier(ModelConfig(**manifest["model"])).to(_DTYPES.get(manifest["dtype"], torch.float64))
    with open(path.with_suffix(".tnsr"), "rb") as f:
        arrays = list(tnsr.iter_tensors(f))
    names = [p["name"] for p in manifest["params"]]
    if len(arrays) != len(names):
        raise ConfigError(f"checkpoint has {len(arrays)} tensors, manifest lists {len(names)}")
    ref = model.state_dict()
    state = {}
    for name, arr, spec in zip(names, arrays, manifest["params"]):
        if list(arr.shape) != spec["shape"] or name not in ref:
            raise ConfigError(f"checkpoint tensor {name} does not match the model")
        state[name] = torch.as_tensor(arr, dtype=ref[name].dtype)
    model.load_state_dict(state)
    model.eval()
    return model


def history_dicts(history: Sequence[EpochLog]) -> list[dict]:
    return [asdict(h) for h in history]
