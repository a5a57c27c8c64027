import json

import numpy as np
import pytest
from PIL import Image

from refit import raster_io as rio
from refit.cli import main, render_overlay
from refit.metrics import dsc
from refit.synthetic import make_phantoms


def write_corpus(root, n=4, seed=5, size=64):
    images, cams, gts = root / "images", root / "cams", root / "gts"
    for d in (images, cams, gts):
        d.mkdir()
    for i, ph in enumerate(make_phantoms(n, seed=seed, size=size)):
        rio.save_image(ph.image, images / f"case{i:02d}.png")
        rio.save_response_map(ph.cam, cams / f"case{i:02d}.rfm")
        rio.save_mask(ph.gt, gts / f"case{i:02d}.png")
    return images, cams, gts


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path)


class TestSuperpix:
    def test_single_image_k1(self, tmp_path):
        src = tmp_path / "in"
        src.mkdir()
        rio.save_image(rio.Raster(np.random.default_rng(0).random((10, 12))), src / "a.png")
        assert main(["superpix", "--images", str(src), "--k", "1", "--out", str(tmp_path / "o")]) == 0
        lm = rio.load_label_map(tmp_path / "o" / "a.png")
        assert lm.shape == (10, 12) and (lm.labels == 0).all()

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "in").mkdir()
        assert main(["superpix", "--images", str(tmp_path / "in"), "--out", str(tmp_path)]) == 2
        assert "no input images" in capsys.readouterr().err

    def test_corrupt_file_skipped(self, tmp_path, corpus):
        images, _, _ = corpus
        (images / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
        out = tmp_path / "o"
        code = main(["superpix", "--images", str(images), "--k", "16", "--out", str(out)])
        assert code == 1
        assert sorted(p.name for p in out.iterdir()) == [f"case{i:02d}.png" for i in range(4)]

    def test_config_file_and_override(self, tmp_path, corpus):
        images, _, _ = corpus
        cfg = tmp_path / "refit.ini"
        cfg.write_text("[pipeline]\nalgo = slic\n[slic]\nk = 1\n[merge]\ncolor_threshold = 0\n"
                       f"[paths]\nimages = {images}\nout = {tmp_path / 'o'}\n")
        assert main(["superpix", "--config", str(cfg)]) == 0
        assert rio.load_label_map(tmp_path / "o" / "case00.png").distinct() == 1
        assert main(["superpix", "--config", str(cfg), "--k", "9"]) == 0
        assert rio.load_label_map(tmp_path / "o" / "case00.png").distinct() > 1

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "refit.ini"
        cfg.write_text("[slic]\nbogus = 3\n")
        assert main(["superpix", "--config", str(cfg)]) == 2

    def test_bad_param(self, corpus, tmp_path):
        images, _, _ = corpus
        assert main(["superpix", "--images", str(images), "--k", "0", "--out", str(tmp_path)]) == 2

    def test_quickshift(self, corpus, tmp_path):
        images, _, _ = corpus
        out = tmp_path / "o"
        assert main(["superpix", "--images", str(images), "--algo", "quickshift",
                     "--kernel-size", "2", "--max-dist", "4", "--out", str(out)]) == 0
        assert len(list(out.iterdir())) == 4


class TestRefine:
    def test_refined_beats_threshold(self, corpus, tmp_path):
        images, cams, gts = corpus
        out = tmp_path / "o"
        assert main(["refine", "--images", str(images), "--cams", str(cams), "--k", "64",
                     "--out", str(out)]) == 0
        for gt_path in sorted(gts.iterdir()):
            gt = rio.load_mask(gt_path)
            refined = rio.load_mask(out / gt_path.name)
            cam = rio.load_response_map(cams / f"{gt_path.stem}.rfm")
            assert dsc(refined, gt) >= dsc(cam.planes[0] >= 0.5, gt)

    def test_zero_cam(self, tmp_path):
        for d in ("i", "c"):
            (tmp_path / d).mkdir()
        rio.save_image(rio.Raster(np.random.default_rng(1).random((8, 8))), tmp_path / "i" / "x.png")
        rio.save_response_map(rio.ResponseMap(np.zeros((1, 8, 8))), tmp_path / "c" / "x.rfm")
        assert main(["refine", "--images", str(tmp_path / "i"), "--cams", str(tmp_path / "c"),
                     "--k", "4", "--out", str(tmp_path / "o")]) == 0
        assert rio.load_mask(tmp_path / "o" / "x.png").count() == 0

    def test_missing_cam(self, corpus, tmp_path, capsys):
        images, cams, _ = corpus
        (cams / "case02.rfm").unlink()
        assert main(["refine", "--images", str(images), "--cams", str(cams),
                     "--out", str(tmp_path / "o")]) == 4
        assert "case02" in capsys.readouterr().err

    def test_dimension_mismatch_skipped(self, corpus, tmp_path):
        images, cams, _ = corpus
        rio.save_response_map(rio.ResponseMap(np.zeros((1, 5, 5))), cams / "case01.rfm")
        out = tmp_path / "o"
        assert main(["refine", "--images", str(images), "--cams", str(cams), "--k", "16",
                     "--out", str(out)]) == 1
        assert not (out / "case01.png").exists() and (out / "case00.png").exists()

    def test_multiclass_writes_class_map(self, tmp_path):
        for d in ("i", "c"):
            (tmp_path / d).mkdir()
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        planes = np.zeros((2, 8, 8))
        planes[0, :, :4] = 0.9
        planes[1, :, 4:] = 0.9
        rio.save_image(rio.Raster(img), tmp_path / "i" / "x.png")
        rio.save_response_map(rio.ResponseMap(planes), tmp_path / "c" / "x.rfm")
        assert main(["refine", "--images", str(tmp_path / "i"), "--cams", str(tmp_path / "c"),
                     "--k", "2", "--border-edge", "off", "--out", str(tmp_path / "o")]) == 0
        classes = rio.load_label_map(tmp_path / "o" / "x_classes.png")
        assert (classes.labels[:, :4] == 1).all() and (classes.labels[:, 4:] == 2).all()


class TestEval:
    def test_identical(self, corpus, tmp_path, capsys):
        _, _, gts = corpus
        assert main(["eval", str(gts), str(gts), "--out", str(tmp_path / "r")]) == 0
        assert capsys.readouterr().out.strip() == "avg_dsc 100.0 avg_miou 100.0"
        doc = json.loads((tmp_path / "r" / "report.json").read_text())
        assert len(doc["per_image"]) == 4
        assert (tmp_path / "r" / "report.csv").read_text().startswith("id,dsc,miou,iou_0,iou_1")

    def test_blank_vs_quarter(self, tmp_path, capsys):
        pred, gt = tmp_path / "p", tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        q = np.zeros((4, 4), dtype=bool)
        q[:2, :2] = True
        rio.save_mask(rio.BinaryMask(q), gt / "a.png")
        rio.save_mask(rio.BinaryMask.zeros(4, 4), pred / "a.png")
        assert main(["eval", str(pred), str(gt)]) == 0
        assert capsys.readouterr().out.strip() == "avg_dsc 0.0 avg_miou 37.5"
        assert (pred / "report.json").exists()

    def test_empty_gt_dir(self, tmp_path):
        (tmp_path / "p").mkdir()
        (tmp_path / "g").mkdir()
        assert main(["eval", str(tmp_path / "p"), str(tmp_path / "g")]) == 2

    def test_misaligned(self, corpus, tmp_path):
        _, _, gts = corpus
        pred = tmp_path / "p"
        pred.mkdir()
        rio.save_mask(rio.load_mask(gts / "case00.png"), pred / "case00.png")
        assert main(["eval", str(pred), str(gts)]) == 4


class TestSearch:
    def test_writes_best(self, corpus, tmp_path):
        images, cams, gts = corpus
        cfg = tmp_path / "s.ini"
        cfg.write_text("[search]\nk = 1, 32\ncompactness = 10\ncolor_threshold = 0.1\n"
                       "sample_size = 2\n")
        out = tmp_path / "o"
        args = ["search", "--config", str(cfg), "--images", str(images), "--cams", str(cams),
                "--gts", str(gts), "--out", str(out), "--seed", "3"]
        assert main(args) == 0
        first = (out / "search.json").read_bytes()
        doc = json.loads(first)
        assert doc["best"]["params"]["k"] == 32 and doc["objective"] == "dsc"
        assert len(doc["sample"]) == 2
        assert main(args) == 0
        assert (out / "search.json").read_bytes() == first

    def test_empty_space(self, corpus, tmp_path):
        images, _, _ = corpus
        cfg = tmp_path / "s.ini"
        cfg.write_text("[search]\nk =\n")
        assert main(["search", "--config", str(cfg), "--images", str(images),
                     "--out", str(tmp_path / "o")]) == 2

    def test_proxy_objective(self, corpus, tmp_path):
        images, _, _ = corpus
        cfg = tmp_path / "s.ini"
        cfg.write_text("[search]\nk = 4, 16\ncompactness = 10\ncolor_threshold = 0\n")
        assert main(["search", "--config", str(cfg), "--images", str(images),
                     "--out", str(tmp_path / "o")]) == 0
        doc = json.loads((tmp_path / "o" / "search.json").read_text())
        assert doc["objective"] == "boundary_recall"


class TestOverlay:
    def setup_image(self, tmp_path, mask_bits):
        img = np.random.default_rng(2).random((12, 12))
        rio.save_image(rio.Raster(img), tmp_path / "img.png")
        rio.save_mask(rio.BinaryMask(mask_bits), tmp_path / "m.png")
        return np.asarray(Image.open(tmp_path / "img.png"))

    def test_empty_mask_identity(self, tmp_path):
        gray = self.setup_image(tmp_path, np.zeros((12, 12), dtype=bool))
        assert main(["overlay", str(tmp_path / "img.png"), str(tmp_path / "m.png"),
                     "--out", str(tmp_path / "o.png")]) == 0
        out = np.asarray(Image.open(tmp_path / "o.png"))
        assert np.array_equal(out, np.repeat(gray[:, :, None], 3, axis=2))

    def test_full_mask_tint(self, tmp_path):
        gray = self.setup_image(tmp_path, np.ones((12, 12), dtype=bool))
        assert main(["overlay", str(tmp_path / "img.png"), str(tmp_path / "m.png"),
                     "--alpha", "0.5", "--out", str(tmp_path / "o.png")]) == 0
        out = np.asarray(Image.open(tmp_path / "o.png")).astype(float)
        g = gray.astype(float) / 255
        expected = np.stack([0.5 * g + 0.5, 0.5 * g, 0.5 * g], axis=2) * 255
        assert np.abs(out - np.rint(expected)).max() == 0

    def test_disk_contour(self):
        yy, xx = np.mgrid[0:15, 0:15]
        disk = np.hypot(yy - 7, xx - 7) <= 4
        image = rio.Raster(np.full((15, 15), 0.5))
        rgb = render_overlay(image, [rio.BinaryMask(disk)], alpha=0.3)
        ring = disk & ~(np.roll(disk, 1, 0) & np.roll(disk, -1, 0)
                        & np.roll(disk, 1, 1) & np.roll(disk, -1, 1))
        assert (rgb[ring] == [255, 0, 0]).all()
        inner = disk & ~ring
        assert (rgb[inner] == np.rint([0.7 * 127.5 + 0.3 * 255, 0.7 * 127.5, 0.7 * 127.5])).all()
        assert (rgb[~disk] == 128).all()

    def test_dimension_mismatch(self, tmp_path):
        self.setup_image(tmp_path, np.zeros((12, 12), dtype=bool))
        rio.save_mask(rio.BinaryMask.zeros(5, 5), tmp_path / "small.png")
        assert main(["overlay", str(tmp_path / "img.png"), str(tmp_path / "small.png"),
                     "--out", str(tmp_path / "o.png")]) == 3
        assert not (tmp_path / "o.png").exists()
