import json

import numpy as np
import pytest
import torch

from nn_refine.dataformat import Dataset, read_field
from nn_refine.training import (DivergenceError, TrainSpec, load_checkpoint,
                                predict, train_pix2pix, train_unet)

from conftest import make_dataset


def spec_for(dataset, checkpoint, **kw):
    base = dict(dataset=str(dataset), checkpoint=str(checkpoint), epochs=2,
                batch_size=4, seed=3)
    base.update(kw)
    return TrainSpec(**base)


@pytest.fixture(scope="module")
def single_pair_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("one") / "ds"
    return make_dataset(root, count=1, grid_n=64, train=1, test=0, seed=4)


class TestSpec:
    def test_validation(self, tmp_path):
        with pytest.raises(ValueError):
            TrainSpec(dataset="d", checkpoint="c", epochs=0)
        with pytest.raises(ValueError):
            TrainSpec(dataset="d", checkpoint="c", reconstruction_weight=-1)

    def test_from_json(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"dataset": "d", "checkpoint": "c",
                                    "epochs": 7, "reconstruction_weight": 10.0}))
        spec = TrainSpec.from_json(path)
        assert spec.epochs == 7
        assert spec.reconstruction_weight == 10.0


class TestUnetTraining:
    def test_single_sample_overfit(self, single_pair_dataset, tmp_path):
        # training on one pair for 500 steps drives the L1 loss below 5%
        # of its starting value
        spec = spec_for(single_pair_dataset, tmp_path / "c.pt", epochs=500,
                        batch_size=1, seed=1)
        ckpt = train_unet(spec)
        history = load_checkpoint(ckpt)["history"]
        assert history[-1]["l1"] <= 0.05 * history[0]["l1"]

    def test_history_and_environment_logged(self, tiny_dataset, tmp_path):
        spec = spec_for(tiny_dataset, tmp_path / "c.pt")
        payload = load_checkpoint(train_unet(spec))
        assert len(payload["history"]) == 2
        assert "torch" in payload["environment"]
        assert payload["spec"]["seed"] == 3

    def test_deterministic_given_seed(self, tiny_dataset, tmp_path):
        s1 = spec_for(tiny_dataset, tmp_path / "a.pt")
        s2 = spec_for(tiny_dataset, tmp_path / "b.pt")
        p1 = load_checkpoint(train_unet(s1))
        p2 = load_checkpoint(train_unet(s2))
        for k, v in p1["models"]["unet"].items():
            assert torch.equal(v, p2["models"]["unet"][k]), k


class TestPix2PixTraining:
    def test_runs_and_logs_components(self, tiny_dataset, tmp_path):
        spec = spec_for(tiny_dataset, tmp_path / "g.pt", epochs=2)
        payload = load_checkpoint(train_pix2pix(spec))
        assert payload["kind"] == "pix2pix"
        assert {"d", "g_adv", "g_l1"} <= set(payload["history"][0])
        assert "generator" in payload["models"]
        assert "discriminator" in payload["models"]

    def test_zero_weight_drops_reconstruction_term(self, tiny_dataset, tmp_path):
        # lambda = 0: the generator objective is pure adversarial; the L1
        # component is still logged but contributes nothing to the update
        spec0 = spec_for(tiny_dataset, tmp_path / "g0.pt", epochs=1,
                         reconstruction_weight=0.0)
        payload = load_checkpoint(train_pix2pix(spec0))
        assert payload["spec"]["reconstruction_weight"] == 0.0
        assert payload["history"][0]["g_l1"] > 0  # logged, not optimized

    def test_discriminator_output_range_after_training(self, tiny_dataset, tmp_path):
        from nn_refine.models import PatchDiscriminator, UNet
        spec = spec_for(tiny_dataset, tmp_path / "g.pt", epochs=1)
        payload = load_checkpoint(train_pix2pix(spec))
        disc = PatchDiscriminator()
        disc.load_state_dict(payload["models"]["discriminator"])
        disc.eval()
        with torch.no_grad():
            s = disc(torch.randn(3, 1, 64, 64), torch.randn(3, 1, 64, 64))
        assert float(s.min()) > 0.0 and float(s.max()) < 1.0


class TestPredict:
    def test_prediction_files_and_index(self, tiny_dataset, tmp_path):
        spec = spec_for(tiny_dataset, tmp_path / "c.pt")
        ckpt = train_unet(spec)
        out = predict(ckpt, tiny_dataset, "test", tmp_path / "preds", "unet")
        index = json.loads((out / "predictions.json").read_text())
        assert index["split"] == "test"
        assert len(index["files"]) == 2  # prediction count equals split size
        for rel in index["files"].values():
            values, meta = read_field(out / rel)
            assert values.shape == (64, 64)
            assert np.all(np.isfinite(values))

    def test_inference_deterministic_bytes(self, tiny_dataset, tmp_path):
        spec = spec_for(tiny_dataset, tmp_path / "c.pt")
        ckpt = train_unet(spec)
        p1 = predict(ckpt, tiny_dataset, "test", tmp_path / "p1", "unet")
        p2 = predict(ckpt, tiny_dataset, "test", tmp_path / "p2", "unet")
        for rel in json.loads((p1 / "predictions.json").read_text())["files"].values():
            assert (p1 / rel).read_bytes() == (p2 / rel).read_bytes()

    def test_pipeline_evaluator_consumes_predictions(self, tmp_path):
        pytest.importorskip("stochsource")
        import subprocess
        import sys
        ds = tmp_path / "ds"
        cmd = [sys.executable, "-m", "stochsource.cli", "generate", "--out", str(ds),
               "--sample-count", "4", "--realizations", "3", "--grid-n", "64",
               "--train", "3", "--test", "1", "--master-seed", "5"]
        res = subprocess.run(cmd, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        spec = spec_for(ds, tmp_path / "c.pt", epochs=1, batch_size=2)
        ckpt = train_unet(spec)
        pred = predict(ckpt, ds, "test", tmp_path / "preds", "unet")
        rep = tmp_path / "rep"
        cmd = [sys.executable, "-m", "stochsource.cli", "evaluate", "--dataset",
               str(ds), "--pred", f"unet={pred}", "--out", str(rep)]
        res = subprocess.run(cmd, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        report = json.loads((rep / "report.json").read_text())
        assert "unet" in report["mean_error"]


class TestMetadataBlindness:
    def test_medium_label_never_reaches_training(self, tmp_path):
        # identical images with different medium metadata train to
        # identical weights: only (X, Y) pairs feed the models
        a = make_dataset(tmp_path / "a", count=4, grid_n=64, train=4, seed=6,
                         medium="homogeneous")
        b = make_dataset(tmp_path / "b", count=4, grid_n=64, train=4, seed=6,
                         medium="inhomogeneous")
        pa = load_checkpoint(train_unet(spec_for(a, tmp_path / "ca.pt", epochs=1)))
        pb = load_checkpoint(train_unet(spec_for(b, tmp_path / "cb.pt", epochs=1)))
        for k, v in pa["models"]["unet"].items():
            assert torch.equal(v, pb["models"]["unet"][k]), k
