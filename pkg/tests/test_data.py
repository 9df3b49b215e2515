import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nibkit.autodiff.optim import adam, optimizer_step, zero_grad
from nibkit.autodiff import ops
from nibkit.autodiff.tensor import Tensor, backward
from nibkit.data import (
    Checkpoint,
    ConsistencyError,
    CorpusSpec,
    ImageFormatError,
    MagicError,
    TruncatedError,
    VersionError,
    decode_pnm,
    encode_pbm,
    encode_pgm,
    flat_fraction,
    gen_corpus,
    load_checkpoint,
    load_corpus,
    read_image,
    save_checkpoint,
    write_image,
)
from nibkit.data.checkpoint import MAGIC
from nibkit.models import ModelConfig, build_model
from nibkit.nib import variant


def pack_bits_reference(binary):
    """Hand bit-packing: MSB first, rows padded to whole bytes, 1 = black."""
    out = bytearray()
    for row in binary:
        for start in range(0, len(row), 8):
            byte = 0
            for k, v in enumerate(row[start : start + 8]):
                if v < 0.5:
                    byte |= 0x80 >> k
            out.append(byte)
    return bytes(out)


class TestPnm:
    def test_p5_example(self):
        buf = b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64])
        np.testing.assert_allclose(decode_pnm(buf), [[0, 128 / 255], [1.0, 64 / 255]])
        assert decode_pnm(buf)[0, 1] == pytest.approx(0.50196, abs=1e-5)

    def test_header_comments(self):
        buf = b"P5 # comment\n2 # w\n1\n255\n" + bytes([7, 9])
        np.testing.assert_allclose(decode_pnm(buf), [[7 / 255, 9 / 255]])

    def test_pbm_test_vector(self):
        assert encode_pbm(np.array([[1.0, 0.0], [0.0, 1.0]])) == b"P4\n2 2\n\x40\x80"

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 19)), elements=st.integers(0, 1)))
    def test_pbm_matches_hand_packing(self, bits):
        binary = bits.astype(np.float64)
        h, w = binary.shape
        data = encode_pbm(binary)
        assert data == f"P4\n{w} {h}\n".encode() + pack_bits_reference(binary)
        np.testing.assert_array_equal(decode_pnm(data), binary)

    @pytest.mark.parametrize(
        "buf, offset",
        [
            (b"P7\n2 2\n255\n", 0),
            (b"P5\n2 x\n255\n", 5),
            (b"P5\n2 2\n65535\n" + bytes(8), 12),
            (b"P5\n2 2\n255\n\x00", 12),
            (b"P5\n2 2", 6),
        ],
    )
    def test_corrupt_headers_report_offset(self, buf, offset):
        with pytest.raises(ImageFormatError) as err:
            decode_pnm(buf)
        assert err.value.offset == offset
        assert f"byte offset {offset}" in str(err.value)


class TestFiles:
    def test_pgm_roundtrip_identical_bytes(self, tmp_path):
        raw = np.random.default_rng(0).integers(0, 256, (13, 17)).astype(np.uint8)
        src = tmp_path / "a.pgm"
        src.write_bytes(encode_pgm(raw))
        img = read_image(src)
        assert img.shape == (1, 1, 13, 17)
        write_image(tmp_path / "b.pgm", img)
        assert (tmp_path / "b.pgm").read_bytes() == src.read_bytes()

    @pytest.mark.parametrize("channels", [1, 3])
    def test_png_roundtrip(self, tmp_path, channels):
        raw = np.random.default_rng(1).integers(0, 256, (channels, 9, 11)).astype(np.float32) / 255
        write_image(tmp_path / "a.png", Tensor(raw[None]))
        back = read_image(tmp_path / "a.png")
        assert back.shape == (1, channels, 9, 11)
        np.testing.assert_array_equal(back.data[0], raw)

    def test_pbm_file(self, tmp_path):
        binary = np.array([[[[1, 0, 1], [0, 0, 1]]]], dtype=np.float32)
        write_image(tmp_path / "h.pbm", Tensor(binary))
        np.testing.assert_array_equal(read_image(tmp_path / "h.pbm").data, binary)

    def test_clamping_warns_with_count(self, tmp_path):
        with pytest.warns(UserWarning, match="3 values"):
            n = write_image(tmp_path / "c.pgm", np.array([[-0.5, 0.2], [1.5, 2.0]]))
        assert n == 3
        np.testing.assert_array_equal(read_image(tmp_path / "c.pgm").data[0, 0], np.float32([[0, 51 / 255], [1, 1]]))


class TestCorpus:
    def test_flat_fraction_measure(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        assert flat_fraction(img) == 1.0
        img[:, 4:] = 1
        # columns 3 and 4 see the step
        assert flat_fraction(img) == pytest.approx(6 / 8)

    def test_deterministic_bytes(self, tmp_path):
        spec = CorpusSpec(count=6, size=32, seed=3)
        gen_corpus(spec, tmp_path / "a")
        gen_corpus(spec, tmp_path / "b")
        for name in sorted(os.listdir(tmp_path / "a")):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_target_reached(self):
        c = gen_corpus(CorpusSpec(count=64, size=64, flat_fraction_target=0.9, seed=0))
        assert 0.85 <= np.mean(c.flat_fractions) <= 0.95

    @pytest.mark.parametrize("target", [0.3, 0.6])
    def test_other_targets(self, target):
        c = gen_corpus(CorpusSpec(count=8, size=32, flat_fraction_target=target, seed=1))
        assert abs(np.mean(c.flat_fractions) - target) <= 0.05

    def test_split(self):
        a = gen_corpus(CorpusSpec(count=10, size=16, split=0.8, seed=5))
        b = gen_corpus(CorpusSpec(count=10, size=16, split=0.8, seed=5))
        assert a.splits.count("train") == 8 and a.splits.count("val") == 2
        assert a.splits == b.splits
        assert a.train().shape == (8, 1, 16, 16)

    def test_manifest_measurement_idempotent(self, tmp_path):
        gen_corpus(CorpusSpec(count=5, size=32, seed=2), tmp_path)
        lines = (tmp_path / "manifest.csv").read_text().splitlines()
        assert lines[0] == "path,split,flat_fraction,mean_gray"
        loaded = load_corpus(tmp_path)
        for row, img in zip(lines[1:], loaded.images):
            u8 = np.round(img[0] * 255).astype(np.uint8)
            _, _, ff, mg = row.split(",")
            assert ff == f"{flat_fraction(u8):.6f}"
            assert mg == f"{u8.mean() / 255:.6f}"

    def test_unreachable_target_rejected(self):
        with pytest.raises(ValueError, match="unreachable"):
            gen_corpus(CorpusSpec(count=4, size=32, flat_fraction_target=0.0, shape_palette=("constant_patches",)))

    @pytest.mark.parametrize("kwargs", [dict(count=1), dict(size=60), dict(shape_palette=("stars",)),
                                        dict(split=1.0), dict(flat_fraction_target=1.5)])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            CorpusSpec(**kwargs)


def trained_checkpoint():
    model = build_model(ModelConfig(nib=variant("D-N-0.3", seed=7), num_blocks=2))
    opt = adam()
    x = Tensor(np.random.default_rng(0).random((2, 1, 8, 8)).astype(np.float32))
    for step in range(2):
        zero_grad(model.params)
        loss = ops.mse_loss(model(x, sample_id=[2 * step, 2 * step + 1]), x)
        backward(loss)
        optimizer_step(opt, model.params)
    return Checkpoint.from_model(model, opt, step=2, extra={"note": "x"})


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        ckpt = trained_checkpoint()
        save_checkpoint(tmp_path / "m.ckpt", ckpt)
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == ckpt.config and back.config.nib.seed == 7
        assert back.step == 2 and back.extra == {"note": "x"}
        for k, v in ckpt.params.items():
            assert back.params[k].tobytes() == v.tobytes()
        for k in ckpt.optimizer.m:
            assert back.optimizer.m[k].tobytes() == ckpt.optimizer.m[k].tobytes()
            assert back.optimizer.v[k].tobytes() == ckpt.optimizer.v[k].tobytes()
        assert back.optimizer.step == 2
        rebuilt = back.build()
        assert rebuilt.snapshot().keys() == ckpt.params.keys()

    def test_fresh_resnet_roundtrip(self, tmp_path):
        model = build_model(ModelConfig())
        save_checkpoint(tmp_path / "r.ckpt", Checkpoint.from_model(model))
        back = load_checkpoint(tmp_path / "r.ckpt")
        assert back.optimizer is None and back.config == model.config
        for k, v in model.params.items():
            assert back.params[k].tobytes() == v.data.tobytes()

    def test_header_is_readable_text(self, tmp_path):
        save_checkpoint(tmp_path / "r.ckpt", trained_checkpoint())
        buf = (tmp_path / "r.ckpt").read_bytes()
        assert buf[:8] == MAGIC
        n = int.from_bytes(buf[8:16], "little")
        assert b'"format_version": 1' in buf[16 : 16 + n]

    def test_truncation(self, tmp_path):
        save_checkpoint(tmp_path / "r.ckpt", trained_checkpoint())
        buf = (tmp_path / "r.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(buf[:-1])
        with pytest.raises(TruncatedError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + bytes(16))
        with pytest.raises(MagicError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_version(self, tmp_path):
        save_checkpoint(tmp_path / "r.ckpt", trained_checkpoint())
        buf = (tmp_path / "r.ckpt").read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
        (tmp_path / "v.ckpt").write_bytes(buf)
        with pytest.raises(VersionError):
            load_checkpoint(tmp_path / "v.ckpt")

    def test_shape_edit_names_parameter(self, tmp_path):
        save_checkpoint(tmp_path / "r.ckpt", trained_checkpoint())
        buf = (tmp_path / "r.ckpt").read_bytes()
        n = int.from_bytes(buf[8:16], "little")
        header = buf[16 : 16 + n]
        # tail.weight is (1, 8, 1, 1); claim (1, 8, 1, 2) without touching sizes
        start = header.index(b'"name": "param/tail.weight"')
        shape_at = header.index(b'"shape": [', start)
        end = header.index(b"]", shape_at)
        new_shape = b'"shape": [\n    1,\n    8,\n    2,\n    1\n   '
        edited = header[:shape_at] + new_shape + header[end:]
        patched = buf[:8] + len(edited).to_bytes(8, "little") + edited + buf[16 + n :]
        (tmp_path / "s.ckpt").write_bytes(patched)
        with pytest.raises(ConsistencyError, match="param/tail.weight"):
            load_checkpoint(tmp_path / "s.ckpt")
