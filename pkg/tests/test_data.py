import struct

import numpy as np
import pytest
from PIL import Image

from conftest import square_image, write_png_dataset
from enfnet.checkpoint import CheckpointError, decode, encode, load_checkpoint, save_checkpoint
from enfnet.config import DESK_NETWORK, PAPER_NETWORK
from enfnet.data import (
    DatasetError,
    hflip_augment,
    load_dataset,
    prepare_sample,
    read_mask,
    to_uint8,
    write_saliency,
)
from enfnet.model import ENFNet
from enfnet.tensor import ShapeError
from enfnet.train import epoch_order


def tiny_dataset(root, n=3, size=32, stems=None):
    imgs, masks = [], []
    for i in range(n):
        img, mask = square_image(size, lo=0.1 * (i + 1) / n, hi=0.9)
        imgs.append(img[0])
        masks.append(mask[0, 0])
    return write_png_dataset(root, imgs, masks, stems)


class TestManifest:
    def test_sorted_pairs(self, tmp_path):
        tiny_dataset(tmp_path, stems=["c", "a", "b"])
        m = load_dataset(tmp_path)
        assert len(m) == 3 and [e.stem for e in m] == ["a", "b", "c"]
        assert all(e.mask.parent.name == "masks" for e in m)

    def test_image_without_mask(self, tmp_path):
        tiny_dataset(tmp_path, stems=["a", "b"])
        (tmp_path / "masks" / "b.png").unlink()
        with pytest.raises(DatasetError, match="images without masks: b"):
            load_dataset(tmp_path)

    def test_mask_without_image(self, tmp_path):
        tiny_dataset(tmp_path, stems=["a", "b"])
        (tmp_path / "images" / "a.png").unlink()
        with pytest.raises(DatasetError, match="masks without images: a"):
            load_dataset(tmp_path)

    def test_missing_masks_dir(self, tmp_path):
        (tmp_path / "images").mkdir()
        with pytest.raises(DatasetError, match="masks"):
            load_dataset(tmp_path)

    def test_edge_map_pickup(self, tmp_path):
        tiny_dataset(tmp_path, stems=["a", "b"])
        edge = np.zeros((16, 16), dtype=np.uint8)
        edge[:, 5] = 255
        Image.fromarray(edge, mode="L").save(tmp_path / "images" / "a.edge.png")
        m = load_dataset(tmp_path)
        assert len(m) == 2
        assert m.entries[0].edge is not None and m.entries[1].edge is None
        cfg = DESK_NETWORK.__class__(input_size=32, global_kernels=(1,))
        sample = prepare_sample(m.entries[0], cfg)
        assert sample.edge.shape == (1, 1, 16, 16)
        np.testing.assert_array_equal(sample.edge.data[0, 0], edge / 255.0)

    def test_undecodable_file(self, tmp_path):
        tiny_dataset(tmp_path, n=1)
        (tmp_path / "images" / "img00.png").write_bytes(b"not a png")
        with pytest.raises(DatasetError, match="img00.png"):
            prepare_sample(load_dataset(tmp_path).entries[0], DESK_NETWORK)


class TestPrepare:
    def test_paper_resize(self, tmp_path):
        rng = np.random.default_rng(0)
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        Image.fromarray(rng.integers(0, 256, (300, 400, 3), dtype=np.uint8), mode="RGB").save(tmp_path / "images/x.png")
        Image.fromarray(((rng.uniform(size=(300, 400)) > 0.5) * 255).astype(np.uint8), mode="L").save(tmp_path / "masks/x.png")
        s = prepare_sample(load_dataset(tmp_path).entries[0], PAPER_NETWORK)
        assert s.image.shape == (1, 3, 352, 352) and s.gt.shape == (1, 1, 176, 176)
        assert s.edge.shape == (1, 1, 176, 176)
        assert set(np.unique(s.gt.data)) <= {0.0, 1.0}
        assert 0 <= s.image.data.min() and s.image.data.max() <= 1

    def test_desk_sizes_and_identity_resampling(self, tmp_path):
        tiny_dataset(tmp_path, n=1, size=96)
        s = prepare_sample(load_dataset(tmp_path).entries[0], DESK_NETWORK)
        assert s.gt.shape == (1, 1, 48, 48) and s.mask.shape == (1, 1, 96, 96)
        raw = np.asarray(Image.open(tmp_path / "images" / "img00.png"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        np.testing.assert_array_equal(s.image.data[0], raw)

    def test_mask_stays_binary_after_downsampling(self, tmp_path):
        tiny_dataset(tmp_path, n=1, size=96)
        s = prepare_sample(load_dataset(tmp_path).entries[0], DESK_NETWORK)
        assert set(np.unique(s.gt.data)) == {0.0, 1.0}


class TestAugment:
    def sample(self, tmp_path):
        tiny_dataset(tmp_path, n=1, size=32)
        cfg = DESK_NETWORK.__class__(input_size=32, global_kernels=(1,))
        return prepare_sample(load_dataset(tmp_path).entries[0], cfg)

    def test_involution(self, tmp_path):
        s = self.sample(tmp_path)
        back = hflip_augment(hflip_augment(s))
        for attr in ("image", "gt", "edge", "mask"):
            assert getattr(back, attr).data.tobytes() == getattr(s, attr).data.tobytes()

    def test_left_impulse_moves_right(self, tmp_path):
        s = self.sample(tmp_path)
        s.image.data[...] = 0
        s.image.data[0, :, 3, 0] = 1
        f = hflip_augment(s)
        assert np.all(f.image.data[0, :, 3, -1] == 1) and f.image.data.sum() == 3

    def test_doubles_epoch(self, tmp_path):
        s = self.sample(tmp_path)
        rng = np.random.default_rng(0)
        assert len(epoch_order([s, s], True, rng)) == 4
        assert len(epoch_order([s, s], False, rng)) == 2


class TestPNG:
    def test_rounding(self):
        np.testing.assert_array_equal(to_uint8(np.array([0.0, 0.5, 1.0])), [0, 128, 255])

    def test_write_read_quantization_bound(self, tmp_path, rng):
        p = rng.uniform(size=(13, 17))
        write_saliency(p, tmp_path / "s.png")
        back = read_mask(tmp_path / "s.png")
        assert back.shape == p.shape
        assert np.max(np.abs(back - p)) <= 1 / 510 + 1e-12

    def test_write_to_missing_dir_names_path(self, tmp_path):
        with pytest.raises(OSError, match="nope"):
            write_saliency(np.zeros((2, 2)), tmp_path / "nope" / "s.png")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = ENFNet(DESK_NETWORK, seed=3)
        save_checkpoint(model.params, tmp_path / "m.enfn")
        state = load_checkpoint(tmp_path / "m.enfn")
        assert list(state) == list(model.params)
        assert all(state[k].tobytes() == model.params[k].data.tobytes() for k in state)
        other = ENFNet(DESK_NETWORK, seed=4)
        other.load_state(state)
        assert all(other.params[k].data.tobytes() == model.params[k].data.tobytes() for k in state)

    def test_layout(self):
        buf = encode({"ab": np.arange(6, dtype=float).reshape(2, 3)})
        assert buf[:4] == b"ENFN"
        assert struct.unpack("<II", buf[4:12]) == (1, 1)
        assert struct.unpack("<H", buf[12:14]) == (2,) and buf[14:16] == b"ab"
        assert buf[16] == 2 and struct.unpack("<II", buf[17:25]) == (2, 3)
        assert np.frombuffer(buf[25:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]

    @pytest.mark.parametrize("cut", [3, 10, 15, 30, -1])
    def test_truncation(self, cut):
        buf = encode({"w": np.ones((2, 2)), "b": np.zeros(2)})
        with pytest.raises(CheckpointError, match="truncated"):
            decode(buf[:cut])

    def test_bad_magic_and_version(self):
        buf = encode({"w": np.ones(1)})
        with pytest.raises(CheckpointError, match="magic"):
            decode(b"XXXX" + buf[4:])
        with pytest.raises(CheckpointError, match="version"):
            decode(buf[:4] + struct.pack("<I", 2) + buf[8:])
        with pytest.raises(CheckpointError, match="trailing"):
            decode(buf + b"\0")

    def test_truncated_file_leaves_model_untouched(self, tmp_path):
        model = ENFNet(DESK_NETWORK)
        save_checkpoint(model.params, tmp_path / "m.enfn")
        raw = (tmp_path / "m.enfn").read_bytes()
        (tmp_path / "m.enfn").write_bytes(raw[: len(raw) // 2])
        before = model.params.state()
        with pytest.raises(CheckpointError):
            model.load_state(load_checkpoint(tmp_path / "m.enfn"))
        assert all(np.array_equal(before[k], model.params[k].data) for k in before)

    def test_paper_checkpoint_rejected_by_desk_model(self, tmp_path):
        save_checkpoint(ENFNet(PAPER_NETWORK).params, tmp_path / "paper.enfn")
        desk = ENFNet(DESK_NETWORK)
        with pytest.raises(ShapeError, match="does not fit this network geometry.*expected shape"):
            desk.load_state(load_checkpoint(tmp_path / "paper.enfn"))

    def test_egb_variant_mismatch_names_parameters(self):
        full = ENFNet(DESK_NETWORK)
        base = ENFNet(DESK_NETWORK.__class__(egb_count=0))
        with pytest.raises(ShapeError, match=r"missing \[.cond\.conv1\.weight"):
            full.load_state(base.params.state())
