"""Training loops for the two neural refiners.

Both consume (stage-one image, truth image) pairs only; medium kind,
measurement data, and any other metadata never reach the models.
Normalization statistics are computed on the training split once and
frozen inside the checkpoint, so inference is deterministic.
"""

from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from . import __version__
from .dataformat import Dataset
from .models import PatchDiscriminator, UNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when a training loss turns non-finite."""


@dataclass
class TrainSpec:
    dataset: str
    checkpoint: str
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 2e-4
    reconstruction_weight: float = 10.0  # lambda: weight of the L1 term in the GAN objective
    seed: int = 0
    split: str = "train"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.reconstruction_weight < 0:
            raise ValueError("the reconstruction weight must be nonnegative")

    @classmethod
    def from_json(cls, path) -> "TrainSpec":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class Normalization:
    """Affine per-role normalization frozen at training time."""
    x_shift: float
    x_scale: float
    y_shift: float
    y_scale: float

    def encode_x(self, x):
        return (x - self.x_shift) / self.x_scale

    def encode_y(self, y):
        return (y - self.y_shift) / self.y_scale

    def decode_y(self, y):
        return y * self.y_scale + self.y_shift


def _tanh_range_normalization(X: np.ndarray, Y: np.ndarray) -> Normalization:
    # map the training value ranges into roughly [-1, 1]
    def affine(a):
        lo, hi = float(a.min()), float(a.max())
        if hi == lo:
            hi = lo + 1.0
        return (lo + hi) / 2.0, (hi - lo) / 2.0
    xs, xsc = affine(X)
    ys, ysc = affine(Y)
    return Normalization(x_shift=xs, x_scale=xsc, y_shift=ys, y_scale=ysc)


def _load_tensors(spec: TrainSpec):
    data = Dataset.open(spec.dataset)
    samples = data.load_split(spec.split)
    X = np.stack([s.stage_one for s in samples]).astype(np.float32)
    Y = np.stack([s.truth for s in samples]).astype(np.float32)
    return data, X[:, None, :, :], Y[:, None, :, :]


def _loader(X, Y, spec: TrainSpec) -> DataLoader:
    gen = torch.Generator().manual_seed(spec.seed)
    ds = TensorDataset(torch.from_numpy(X), torch.from_numpy(Y))
    return DataLoader(ds, batch_size=spec.batch_size, shuffle=True, generator=gen)


def _environment_info() -> dict:
    return {"torch": torch.__version__, "numpy": np.__version__,
            "python": platform.python_version(), "device": "cpu",
            "package": __version__}


def _save_checkpoint(path, kind, models, norm, spec, history):
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "kind": kind,
        "models": {name: m.state_dict() for name, m in models.items()},
        "normalization": asdict(norm),
        "spec": asdict(spec),
        "history": history,
        "environment": _environment_info(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise RuntimeError(f"unsupported checkpoint version in {path}")
    return payload


def build_generator(payload: dict) -> tuple[nn.Module, Normalization]:
    norm = Normalization(**payload["normalization"])
    net = UNet(tanh_output=(payload["kind"] == "pix2pix"))
    key = "generator" if "generator" in payload["models"] else "unet"
    net.load_state_dict(payload["models"][key])
    net.eval()
    return net, norm


def train_unet(spec: TrainSpec) -> Path:
    """Minimize the mean L1 loss of a U-Net refiner; returns the checkpoint path."""
    torch.manual_seed(spec.seed)
    _, X, Y = _load_tensors(spec)
    norm = _tanh_range_normalization(X, Y)
    loader = _loader(norm.encode_x(X), norm.encode_y(Y), spec)

    net = UNet(tanh_output=False)
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate, betas=(0.5, 0.999))
    loss_fn = nn.L1Loss()

    history = []
    for epoch in range(spec.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for xb, yb in loader:
            opt.zero_grad()
            loss = loss_fn(net(xb), yb)
            if not torch.isfinite(loss):
                raise DivergenceError(f"L1 loss diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss) * xb.shape[0]
            count += xb.shape[0]
        history.append({"epoch": epoch, "l1": total / count,
                        "seconds": time.perf_counter() - t0})
        log.info("unet epoch %d/%d: L1 %.4f (%.1fs)", epoch + 1, spec.epochs,
                 history[-1]["l1"], history[-1]["seconds"])

    out = Path(spec.checkpoint)
    _save_checkpoint(out, "unet", {"unet": net}, norm, spec, history)
    return out


def train_pix2pix(spec: TrainSpec) -> Path:
    """Alternating generator/discriminator updates on the combined
    adversarial + weighted-L1 objective; returns the checkpoint path
    (holds both networks)."""
    torch.manual_seed(spec.seed)
    _, X, Y = _load_tensors(spec)
    norm = _tanh_range_normalization(X, Y)
    loader = _loader(norm.encode_x(X), norm.encode_y(Y), spec)

    gen = UNet(tanh_output=True)
    disc = PatchDiscriminator()
    opt_g = torch.optim.Adam(gen.parameters(), lr=spec.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=spec.learning_rate, betas=(0.5, 0.999))
    bce = nn.BCELoss()
    l1 = nn.L1Loss()

    history = []
    for epoch in range(spec.epochs):
        t0 = time.perf_counter()
        sums = {"d": 0.0, "g_adv": 0.0, "g_l1": 0.0}
        count = 0
        for xb, yb in loader:
            fake = gen(xb)

            # discriminator: real pairs toward 1, generated pairs toward 0
            opt_d.zero_grad()
            real_score = disc(xb, yb)
            fake_score = disc(xb, fake.detach())
            loss_d = 0.5 * (bce(real_score, torch.ones_like(real_score))
                            + bce(fake_score, torch.zeros_like(fake_score)))
            loss_d.backward()
            opt_d.step()

            # generator: fool the discriminator plus weighted reconstruction
            opt_g.zero_grad()
            fool_score = disc(xb, fake)
            loss_adv = bce(fool_score, torch.ones_like(fool_score))
            loss_l1 = l1(fake, yb)
            loss_g = loss_adv + spec.reconstruction_weight * loss_l1
            if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
                raise DivergenceError(
                    f"GAN losses diverged at epoch {epoch}: "
                    f"d={float(loss_d)} g_adv={float(loss_adv)} l1={float(loss_l1)}")
            loss_g.backward()
            opt_g.step()

            n = xb.shape[0]
            sums["d"] += float(loss_d) * n
            sums["g_adv"] += float(loss_adv) * n
            sums["g_l1"] += float(loss_l1) * n
            count += n
        history.append({"epoch": epoch,
                        "d": sums["d"] / count,
                        "g_adv": sums["g_adv"] / count,
                        "g_l1": sums["g_l1"] / count,
                        "seconds": time.perf_counter() - t0})
        log.info("pix2pix epoch %d/%d: d %.4f g_adv %.4f l1 %.4f (%.1fs)",
                 epoch + 1, spec.epochs, history[-1]["d"], history[-1]["g_adv"],
                 history[-1]["g_l1"], history[-1]["seconds"])

    out = Path(spec.checkpoint)
    _save_checkpoint(out, "pix2pix", {"generator": gen, "discriminator": disc},
                     norm, spec, history)
    return out


def predict(checkpoint_path, dataset_path, split: str, out_dir,
            method_name: str | None = None) -> Path:
    """Write predictions for a split in the shared field format plus a
    predictions.json index the pipeline evaluator consumes unchanged."""
    from .dataformat import write_field

    payload = load_checkpoint(checkpoint_path)
    net, norm = build_generator(payload)
    data = Dataset.open(dataset_path)
    ids = data.split_ids(split)

    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    files = {}
    t0 = time.perf_counter()
    with torch.no_grad():
        for sample_id in ids:
            sample = data.load(sample_id)
            x = norm.encode_x(sample.stage_one.astype(np.float32))
            xb = torch.from_numpy(x[None, None]).float()
            pred = norm.decode_y(net(xb).numpy()[0, 0].astype(np.float64))
            rel = f"fields/pred_{sample_id:06d}.bin"
            meta = {"id": sample_id, "grid_n": data.grid_n,
                    "grid_lo": sample.metadata.get("grid_lo", -1.0),
                    "grid_hi": sample.metadata.get("grid_hi", 1.0)}
            write_field(pred, out / rel, meta)
            files[str(sample_id)] = rel
    index = {"method": method_name or payload["kind"],
             "dataset": str(dataset_path), "split": split, "files": files,
             "predict_seconds": time.perf_counter() - t0,
             "checkpoint": str(checkpoint_path),
             "environment": payload.get("environment", {})}
    (out / "predictions.json").write_text(json.dumps(index, indent=2))
    return out
