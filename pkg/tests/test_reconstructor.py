import numpy as np
import pytest
import torch
import torch.nn.functional as F

from src import reconstructor
from src.errors import ContractViolation
from src.experiments import CorpusLeakError, check_leak
from src.filters import render_ar
from src.imaging import Image, alpha_blend, make_placement
from src.reconstructor import TrainingDiverged
from src.schemas import DatasetManifest, TrainHyper, UNetConfig
from src.synthetic import render_identity_images


def test_deblend_recovers_every_8bit_source_value():
    values = np.arange(256) / 255.0
    src = Image(np.repeat(values[None, :, None], 3, axis=2))
    asset = Image.blank(256, 1, (13 / 255, 13 / 255, 18 / 255))
    placement = make_placement(np.eye(2, 3), np.ones((1, 256)), src.dims)

    stored = alpha_blend(src, asset, placement, 0.95).quantized()
    recovered = reconstructor.analytic_deblend(stored, asset, placement, 0.95)

    assert np.abs(recovered.pixels - src.pixels).max() <= 10 / 255 + 1e-6


def test_deblend_refuses_opaque_blends():
    img = Image.blank(4, 4)
    placement = make_placement(np.eye(2, 3), np.ones((4, 4)), img.dims)
    with pytest.raises(ContractViolation):
        reconstructor.analytic_deblend(img, img, placement, 1.0)


@pytest.mark.parametrize("depth", [2, 3, 4])
def test_output_shape_matches_input(depth):
    cfg = UNetConfig(input_size=32, depth=depth, base_channels=4)
    model = reconstructor.build_model(cfg, seed=0)
    x = torch.rand(2, 3, 32, 32)
    assert model(x).shape == x.shape


def test_additive_skips_use_fewer_parameters():
    add = reconstructor.build_model(UNetConfig(input_size=32, depth=3, base_channels=8, skip_mode="add"), 0)
    concat = reconstructor.build_model(UNetConfig(input_size=32, depth=3, base_channels=8, skip_mode="concat"), 0)
    assert reconstructor.parameter_count(add) < reconstructor.parameter_count(concat)


def test_input_size_must_divide_by_depth():
    with pytest.raises(ValueError):
        UNetConfig(input_size=36, depth=4)


def test_gradient_check_on_toy_network():
    results = reconstructor.gradient_check(UNetConfig(input_size=4, depth=2, base_channels=2), seed=1)
    assert len(results) == 10
    assert max(reconstructor.relative_errors(results)) < 1e-3


def test_same_seed_builds_identical_weights():
    cfg = UNetConfig(input_size=16, depth=2, base_channels=4)
    a, b = reconstructor.build_model(cfg, 5), reconstructor.build_model(cfg, 5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_train_rejects_wrong_sizes():
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=2), 0)
    pair = (Image.blank(8, 8), Image.blank(8, 8))
    with pytest.raises(ContractViolation):
        reconstructor.train(model, [pair], TrainHyper(epochs=1))


def test_non_finite_loss_raises_training_diverged(mocker):
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=2), 0)
    pairs = [(Image.blank(16, 16), Image.blank(16, 16))] * 4
    mocker.patch.object(reconstructor.F, "mse_loss", return_value=torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(TrainingDiverged) as excinfo:
        reconstructor.train(model, pairs, TrainHyper(epochs=1, batch_size=2))
    assert excinfo.value.step == 0


def test_validation_split_is_seeded_and_disjoint():
    hyper = TrainHyper(seed=3, val_fraction=0.2)
    train_idx, val_idx = reconstructor.validation_split(20, hyper)
    assert len(val_idx) == 4
    assert sorted(train_idx + val_idx) == list(range(20))
    assert (train_idx, val_idx) == reconstructor.validation_split(20, hyper)


def _occlusion_pairs(count, size):
    faces = []
    identity = 0
    while len(faces) < count:
        faces.extend(img for img, _ in render_identity_images(11, identity, 10))
        identity += 1
    band = np.zeros((size, size))
    band[size // 3 : size // 2, size // 8 : size - size // 8] = 1.0
    placement = make_placement(np.eye(2, 3), band, (size, size))
    cover = Image.blank(size, size, (0.05, 0.05, 0.07))
    pairs = []
    for face in faces[:count]:
        clean = reconstructor.resize(face, (size, size))
        pairs.append((alpha_blend(clean, cover, placement, 1.0), clean))
    return pairs


@pytest.mark.slow
def test_reconstruction_learns_fixed_occlusion():
    pairs = _occlusion_pairs(200, 32)
    hyper = TrainHyper(epochs=100, lr=2e-3, seed=0, val_fraction=0.1)
    assert hyper.batch_size == 64
    model = reconstructor.build_model(UNetConfig(input_size=32, depth=2, base_channels=16), seed=0)

    report = reconstructor.train(model, pairs, hyper)

    _, val_idx = reconstructor.validation_split(len(pairs), hyper)
    baseline = np.mean([np.mean((pairs[i][0].pixels - pairs[i][1].pixels) ** 2) for i in val_idx])
    assert report.final_val_loss < 0.25 * baseline
    assert report.steps == 100 * int(np.ceil(180 / 64))


def test_checkpoint_round_trip_keeps_weights_and_corpus(tmp_path):
    cfg = UNetConfig(input_size=16, depth=2, base_channels=4)
    model = reconstructor.build_model(cfg, 7)
    model.trained_on = "synthetic-s1000-n30-k8"
    uri = str(tmp_path / "unet.pt")
    reconstructor.save_checkpoint(model, uri)

    loaded = reconstructor.load_checkpoint(uri)
    assert loaded.cfg == cfg
    assert loaded.trained_on == model.trained_on
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.allclose(loaded(x), model(x))


def test_reconstruct_restores_original_dimensions():
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=2), 0)
    out = reconstructor.reconstruct(model, Image.blank(40, 30, (0.3, 0.3, 0.3)))
    assert out.dims == (40, 30)


def test_leak_guard_refuses_model_trained_on_evaluation_corpus():
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=2), 0)
    model.trained_on = "synthetic-s0-n20-k12"
    source = DatasetManifest(name="benchmark", source="synthetic-s0-n20-k12")
    with pytest.raises(CorpusLeakError):
        check_leak(source, [model])
    check_leak(source.model_copy(update={"source": "other"}), [model])


def test_make_pairs_requires_shades_filter(small_corpus, out_dir):
    manifest, _ = small_corpus
    with pytest.raises(ContractViolation):
        reconstructor.make_pairs(manifest, "dog", out_dir)


def test_make_and_load_pairs(small_corpus, out_dir):
    manifest, _ = small_corpus
    pairs = reconstructor.make_pairs(manifest, "shades_no_leak", out_dir)
    assert pairs.corpus == manifest.source
    assert len(pairs.pairs) > 0
    loaded = reconstructor.load_pairs(pairs, 32)
    occluded, clean = loaded[0]
    assert occluded.dims == clean.dims == (32, 32)
    assert not np.allclose(occluded.pixels, clean.pixels)


def test_zero_epochs_leave_weights_untouched():
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=4), 2)
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    pairs = [(Image.blank(16, 16, (0.2, 0.2, 0.2)), Image.blank(16, 16, (0.8, 0.8, 0.8)))] * 4

    report = reconstructor.train(model, pairs, TrainHyper(epochs=0))

    assert report.steps == 0
    assert report.epoch_losses == []
    for name, param in model.named_parameters():
        assert torch.equal(param, before[name]), name


def test_zeroed_decoder_path_leaves_only_the_skip_maps():
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=4), 3)
    with torch.no_grad():
        for stage in model.decoder:
            stage.up.weight.zero_()
            stage.up.bias.zero_()
    x = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))

    with torch.no_grad():
        out = model(x)
        skip = F.relu(model.encoder[0].conv(x))
        expected = torch.sigmoid(model.head(F.relu(model.decoder[0].conv(skip))))
        assert torch.allclose(out, expected, atol=1e-6)

        model.bottleneck.weight.add_(1.0)
        model.encoder[1].down.weight.add_(1.0)
        assert torch.allclose(model(x), out, atol=1e-6)


def test_epoch_loss_falls_over_ten_epochs():
    pairs = _occlusion_pairs(128, 32)
    model = reconstructor.build_model(UNetConfig(input_size=32, depth=2, base_channels=8), seed=0)

    report = reconstructor.train(model, pairs, TrainHyper(epochs=10, lr=2e-3, seed=0))

    assert len(report.epoch_losses) == 10
    assert report.epoch_losses[-1] < report.epoch_losses[0]


def test_reconstruct_is_deterministic_and_does_not_switch_modes(mocker):
    model = reconstructor.build_model(UNetConfig(input_size=16, depth=2, base_channels=4), 0)
    assert not model.training
    to_eval = mocker.spy(model, "eval")
    to_train = mocker.spy(model, "train")
    img = Image(np.random.default_rng(4).uniform(0, 1, (30, 20, 3)))

    first = reconstructor.reconstruct(model, img)
    second = reconstructor.reconstruct(model, img)

    assert np.array_equal(first.pixels, second.pixels)
    to_eval.assert_not_called()
    to_train.assert_not_called()


@pytest.mark.slow
def test_shades_leak_reconstruction_beats_the_occluded_input_inside_lenses():
    rendered = [(img, marks) for identity in range(30) for img, marks in render_identity_images(21, identity, 8)]
    samples = []
    for img, marks in rendered:
        occluded, placement = render_ar(img, "shades_leak", marks)
        samples.append((occluded, img, placement.mask >= 1.0))
    train_samples, val_samples = samples[:200], samples[200:]

    cfg = UNetConfig(input_size=64, depth=3, base_channels=16)
    model = reconstructor.build_model(cfg, seed=0)
    pairs = [(reconstructor.resize(o, (64, 64)), reconstructor.resize(c, (64, 64))) for o, c, _ in train_samples]
    reconstructor.train(model, pairs, TrainHyper(epochs=60, lr=2e-3, seed=0))

    recon_error, input_error = [], []
    for occluded, clean, lens in val_samples:
        restored = reconstructor.reconstruct(model, occluded)
        recon_error.append(np.abs(restored.pixels - clean.pixels)[lens].mean())
        input_error.append(np.abs(occluded.pixels - clean.pixels)[lens].mean())
    assert np.mean(recon_error) < np.mean(input_error)
