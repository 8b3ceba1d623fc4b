"""Encoder-decoder network with additive skips that undoes eyewear occlusions."""

from __future__ import annotations

import io
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

import storage
from errors import BenchError, ContractViolation
from filters import detect_landmarks, render_ar, transform_dataset
from imaging import Image, Placement, decode_image, encode_image, resize, warp_array
from schemas import DatasetManifest, DatasetRecord, ImagePair, PairManifest, ProvenanceStep, TrainHyper, TrainReport, UNetConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "unet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(BenchError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}", details={"step": step, "loss": str(loss)})
        self.step = step
        self.loss = loss


class EncoderStage(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.down = nn.Conv2d(c_out, c_out, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        skip = F.relu(self.conv(x))
        return F.relu(self.down(skip)), skip


class DecoderStage(nn.Module):
    def __init__(self, c_in: int, c_out: int, skip_mode: str):
        super().__init__()
        self.skip_mode = skip_mode
        self.up = nn.ConvTranspose2d(c_in, c_out, 2, stride=2)
        merged = c_out if skip_mode == "add" else 2 * c_out
        self.conv = nn.Conv2d(merged, c_out, 3, padding=1)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.up(x))
        x = x + skip if self.skip_mode == "add" else torch.cat([x, skip], dim=1)
        return F.relu(self.conv(x))


class UNet(nn.Module):
    """Strided-convolution U-NET; skips add encoder maps into the decoder."""

    def __init__(self, cfg: UNetConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        self.trained_on: Optional[str] = None
        channels = cfg.stage_channels()
        self.encoder = nn.ModuleList(
            EncoderStage(3 if i == 0 else channels[i - 1], channels[i]) for i in range(cfg.depth)
        )
        self.bottleneck = nn.Conv2d(channels[cfg.depth - 1], channels[cfg.depth], 3, padding=1)
        self.decoder = nn.ModuleList(
            DecoderStage(channels[i + 1], channels[i], cfg.skip_mode) for i in range(cfg.depth)
        )
        self.head = nn.Conv2d(channels[0], 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for stage in self.encoder:
            x, skip = stage(x)
            skips.append(skip)
        x = F.relu(self.bottleneck(x))
        for i in reversed(range(self.cfg.depth)):
            x = self.decoder[i](x, skips[i])
        return torch.sigmoid(self.head(x))


def build_model(cfg: UNetConfig, seed: int) -> UNet:
    """Build a network in inference mode whose initial weights depend only on `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = UNet(cfg, seed)
    model.eval()
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def to_tensor(images: Sequence[Image]) -> torch.Tensor:
    array = np.stack([img.pixels for img in images]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(array)).float()


def from_tensor(batch: torch.Tensor) -> List[Image]:
    array = batch.detach().cpu().double().numpy().transpose(0, 2, 3, 1)
    return [Image(a) for a in array]


def _mean_loss(model: UNet, x: torch.Tensor, y: torch.Tensor, batch_size: int) -> float:
    if len(x) == 0:
        return 0.0
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            xb, yb = x[start:start + batch_size], y[start:start + batch_size]
            total += F.mse_loss(model(xb), yb, reduction="sum").item()
    return total / x.numel()


def train(
    model: UNet,
    pairs: Sequence[Tuple[Image, Image]],
    hyper: TrainHyper,
    *,
    show_progress: bool = False,
) -> TrainReport:
    """Minimise pixel MSE between model(occluded) and clean; shuffling is seeded."""
    size = model.cfg.input_size
    for index, (occluded, clean) in enumerate(pairs):
        if occluded.dims != (size, size) or clean.dims != (size, size):
            raise ContractViolation(
                f"pair {index} is not {size}x{size}",
                details={"occluded": list(occluded.dims), "clean": list(clean.dims)},
            )

    generator = torch.Generator().manual_seed(hyper.seed)
    n = len(pairs)
    train_idx, val_idx = _split(n, hyper, generator)
    x = to_tensor([p[0] for p in pairs]) if n else torch.empty(0, 3, size, size)
    y = to_tensor([p[1] for p in pairs]) if n else torch.empty(0, 3, size, size)

    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    epoch_losses: List[float] = []
    step = 0
    model.train()
    epochs = range(hyper.epochs)
    for epoch in tqdm(epochs, desc="unet", disable=not show_progress):
        shuffled = train_idx[torch.randperm(len(train_idx), generator=generator)]
        running, batches = 0.0, 0
        for start in range(0, len(shuffled), hyper.batch_size):
            batch = shuffled[start:start + hyper.batch_size]
            loss = F.mse_loss(model(x[batch]), y[batch])
            if not torch.isfinite(loss):
                logger.error("unet_training_diverged", extra={"step": step, "loss": loss.item()})
                raise TrainingDiverged(step, loss.item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += loss.item()
            batches += 1
            step += 1
        epoch_losses.append(running / max(batches, 1))
        logger.info("unet_epoch_done", extra={"epoch": epoch + 1, "loss": epoch_losses[-1], "steps": step})
    model.eval()

    held_out = val_idx if len(val_idx) else train_idx
    val_loss = _mean_loss(model, x[held_out], y[held_out], hyper.batch_size)
    return TrainReport(epoch_losses=epoch_losses, final_val_loss=val_loss, steps=step, seed=hyper.seed)


def _split(n: int, hyper: TrainHyper, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    order = torch.randperm(n, generator=generator)
    n_val = min(int(round(n * hyper.val_fraction)), max(n - 1, 0))
    return order[n_val:], order[:n_val]


def validation_split(n: int, hyper: TrainHyper) -> Tuple[List[int], List[int]]:
    """The (train, validation) indices `train` uses for `n` pairs."""
    train_idx, val_idx = _split(n, hyper, torch.Generator().manual_seed(hyper.seed))
    return train_idx.tolist(), val_idx.tolist()


def predict(model: UNet, images: Sequence[Image]) -> List[Image]:
    """Forward images already at the model's input size; the model is not mutated."""
    with torch.no_grad():
        return from_tensor(model(to_tensor(images)))


def reconstruct(model: UNet, img: Image) -> Image:
    """Resize to the model input, run the network, resize back."""
    size = model.cfg.input_size
    (out,) = predict(model, [resize(img, (size, size))])
    return resize(out, img.dims)


def analytic_deblend(img: Image, asset: Image, placement: Placement, alpha: float) -> Image:
    """Invert a constant-alpha blend on fully covered pixels."""
    if not 0.0 <= alpha < 1.0:
        raise ContractViolation(f"alpha must be < 1 to invert a blend, got {alpha}")
    if placement.dims != img.dims:
        raise ContractViolation("placement mask does not match image dimensions")
    warped = warp_array(asset.pixels, placement.affine, img.dims)
    full = placement.mask >= 1.0
    out = img.pixels.copy()
    out[full] = (img.pixels[full] - alpha * warped[full]) / (1.0 - alpha)
    return Image(out)


def gradient_check(
    cfg: UNetConfig,
    *,
    seed: int = 0,
    n_params: int = 10,
    eps: float = 1e-4,
) -> List[Tuple[float, float]]:
    """Compare autograd and central finite differences of the MSE loss.

    Runs in float64 on a random input/target pair and returns
    (analytic, numeric) for `n_params` randomly chosen scalar weights.
    """
    model = build_model(cfg, seed).double()
    generator = torch.Generator().manual_seed(seed)
    size = cfg.input_size
    x = torch.rand(1, 3, size, size, generator=generator, dtype=torch.float64)
    y = torch.rand(1, 3, size, size, generator=generator, dtype=torch.float64)

    loss = F.mse_loss(model(x), y)
    model.zero_grad()
    loss.backward()

    flat = [(p, i) for p in model.parameters() for i in range(p.numel())]
    picks = torch.randperm(len(flat), generator=generator)[:n_params].tolist()
    results = []
    with torch.no_grad():
        for pick in picks:
            param, index = flat[pick]
            view = param.view(-1)
            analytic = param.grad.view(-1)[index].item()
            original = view[index].item()
            view[index] = original + eps
            plus = F.mse_loss(model(x), y).item()
            view[index] = original - eps
            minus = F.mse_loss(model(x), y).item()
            view[index] = original
            results.append((analytic, (plus - minus) / (2 * eps)))
    return results


def save_checkpoint(model: UNet, uri: str) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.model_dump(),
        "seed": model.seed,
        "trained_on": model.trained_on or "",
        "state_dict": model.state_dict(),
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    storage.write_bytes(uri, buffer.getvalue())
    logger.info("unet_checkpoint_saved", extra={"uri": uri})


def load_checkpoint(uri: str) -> UNet:
    payload = torch.load(io.BytesIO(storage.read_bytes(uri)), map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ContractViolation(
            f"{uri} is not a version {CHECKPOINT_VERSION} U-NET checkpoint",
            details={"format": payload.get("format"), "version": payload.get("version")},
        )
    model = build_model(UNetConfig(**payload["config"]), payload["seed"])
    model.load_state_dict(payload["state_dict"])
    model.trained_on = payload["trained_on"] or None
    model.eval()
    return model


def make_pairs(manifest: DatasetManifest, filter_id: str, out_dir: str, *, fmt: str = "png") -> PairManifest:
    """Write occluded/clean image pairs for the shades filter `filter_id`."""
    if not filter_id.startswith("shades"):
        raise ContractViolation(f"reconstruction pairs need a shades filter, got {filter_id!r}")
    pairs: List[ImagePair] = []
    for record in manifest.records:
        clean = decode_image(storage.read_bytes(storage.join(manifest.root, record.path)))
        landmarks = detect_landmarks(clean)
        if landmarks is None:
            logger.info("pair_skipped", extra={"image_id": record.image_id, "reason": "landmarks_absent"})
            continue
        occluded, _ = render_ar(clean, filter_id, landmarks)
        occluded_path = f"pairs/{filter_id}/occluded/{record.image_id}.{fmt}"
        storage.write_bytes(storage.join(out_dir, occluded_path), encode_image(occluded, fmt))
        pairs.append(ImagePair(image_id=record.image_id, occluded_path=occluded_path, clean_path=storage.absolute(storage.join(manifest.root, record.path))))
    logger.info("pairs_built", extra={"filter_id": filter_id, "pairs": len(pairs), "corpus": manifest.source})
    return PairManifest(corpus=manifest.source, filter_id=filter_id, root=str(out_dir), pairs=pairs)


def load_pairs(pairs: PairManifest, size: int) -> List[Tuple[Image, Image]]:
    """Decode a pair manifest, resized to `size`x`size`."""
    loaded = []
    for pair in pairs.pairs:
        occluded = decode_image(storage.read_bytes(storage.join(pairs.root, pair.occluded_path)))
        clean = decode_image(storage.read_bytes(storage.join(pairs.root, pair.clean_path)))
        loaded.append((resize(occluded, (size, size)), resize(clean, (size, size))))
    return loaded


def reconstruct_manifest(model: UNet, manifest: DatasetManifest, name: str, out_dir: str, *, fmt: str = "png") -> DatasetManifest:
    """Run the network over every image of a variant."""
    step = ProvenanceStep(op="reconstruction", params={"model_seed": model.seed, "trained_on": model.trained_on or ""})

    def transform(img: Image, record: DatasetRecord):
        return reconstruct(model, img), step

    return transform_dataset(manifest, name, [transform] * len(manifest.records), out_dir, fmt=fmt)


def relative_errors(results: Sequence[Tuple[float, float]], floor: float = 1e-6) -> List[float]:
    return [abs(a - n) / max(abs(a), abs(n), floor) for a, n in results]

