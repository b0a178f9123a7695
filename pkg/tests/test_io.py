import numpy as np
import pytest

from bicam import weightfile
from bicam.cli import read_grid_csv, write_grid_csv
from bicam.errors import DataFormatError
from bicam.netpbm import (read_pgm, read_ppm, render_channel, render_signed,
                          signed_scale, write_pgm, write_ppm, write_rendered)
from bicam.vit import ViTConfig, init_weights


# -- ppm -------------------------------------------------------------------------


def test_ppm_round_trip_error_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((3, 9, 13))
    p = str(tmp_path / "x.ppm")
    write_ppm(p, img)
    back = read_ppm(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0


def test_ppm_written_values_round_trip_exactly(tmp_path):
    # values already on the 8-bit lattice survive a write/read cycle bitwise
    img = np.round(np.random.default_rng(1).random((3, 4, 4)) * 255) / 255.0
    p = str(tmp_path / "x.ppm")
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)


def test_ppm_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(DataFormatError):
        read_ppm(str(p))


def test_ppm_rejects_truncated(tmp_path):
    p = tmp_path / "short.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(DataFormatError):
        read_ppm(str(p))


def test_ppm_rejects_wrong_maxval(tmp_path):
    p = tmp_path / "max.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(DataFormatError):
        read_ppm(str(p))


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# a comment\n2 # inline\n1\n255\n" + bytes([0, 0, 0, 255, 255, 255]))
    img = read_ppm(str(p))
    assert img.shape == (3, 1, 2)
    assert img[0, 0, 0] == 0.0 and img[0, 0, 1] == 1.0


# -- pgm -------------------------------------------------------------------------


def test_pgm_round_trip_binary_mask(tmp_path):
    mask = np.random.default_rng(2).integers(0, 2, (6, 5))
    p = str(tmp_path / "m.pgm")
    write_pgm(p, mask)
    assert np.array_equal(read_pgm(p), mask)


def test_pgm_threshold_at_127(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 1\n255\n" + bytes([0, 127, 128, 255]))
    assert np.array_equal(read_pgm(str(p)), [[0, 0, 1, 1]])


def test_pgm_ascii_p2(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n3 2\n255\n0 200 10\n255 0 130\n")
    assert np.array_equal(read_pgm(str(p)), [[0, 1, 0], [1, 0, 1]])


def test_pgm_truncated(tmp_path):
    p = tmp_path / "tr.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(DataFormatError):
        read_pgm(str(p))


# -- rendering -----------------------------------------------------------------------


def test_render_zero_map_uniform_white():
    img = render_signed(np.zeros((3, 3)))
    assert np.array_equal(img, np.full((3, 3, 3), 255, np.uint8))


def test_render_hand_values():
    heat = np.array([[1.0, -1.0], [0.0, 0.5]])
    img = render_signed(heat)  # scale = 1
    assert tuple(img[0, 0]) == (255, 0, 0)        # strongest positive: pure red
    assert tuple(img[0, 1]) == (0, 0, 255)        # strongest negative: pure blue
    assert tuple(img[1, 0]) == (255, 255, 255)    # zero: white midpoint
    # v = 0.5 -> red stays 255, green/blue fade to rint(127.5) = 128
    assert tuple(img[1, 1]) == (255, 128, 128)


def test_channel_renderings_reconstruct_signed(tmp_path):
    heat = np.array([[0.8, -0.4], [0.0, -1.0]])
    scale = signed_scale(heat)
    signed = render_signed(heat, scale)
    pos = render_channel(np.maximum(heat, 0), scale, "positive")
    neg = render_channel(np.maximum(-heat, 0), scale, "negative")
    recombined = np.where((heat > 0)[..., None], pos,
                          np.where((heat < 0)[..., None], neg,
                                   np.full_like(pos, 255)))
    assert np.array_equal(recombined, signed)
    write_rendered(str(tmp_path / "r.ppm"), signed)
    assert np.array_equal(read_ppm(str(tmp_path / "r.ppm")),
                          signed.transpose(2, 0, 1) / 255.0)


# -- weight files -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_weights():
    cfg = ViTConfig(image_height=8, image_width=8, patch_size=4, num_layers=2,
                    num_heads=2, embed_dim=8, ffn_dim=12, num_classes=2,
                    distillation_token=True, temperature=1.5)
    return init_weights(cfg, seed=11)


def test_weightfile_round_trip_bitwise(small_weights, tmp_path):
    p = str(tmp_path / "w.bw")
    weightfile.save_weights(small_weights, p)
    back = weightfile.load_weights(p)
    assert back.config == small_weights.config
    assert back.checksum() == small_weights.checksum()
    for name, arr in small_weights.tensors.items():
        assert np.array_equal(back[name], arr)


def test_weightfile_rejects_corrupt_magic(small_weights, tmp_path):
    p = tmp_path / "w.bw"
    weightfile.save_weights(small_weights, str(p))
    raw = bytearray(p.read_bytes())
    raw[0] = ord(b"X")
    p.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        weightfile.load_weights(str(p))


def test_weightfile_rejects_truncation(small_weights, tmp_path):
    p = tmp_path / "w.bw"
    weightfile.save_weights(small_weights, str(p))
    raw = p.read_bytes()
    p.write_bytes(raw[:-50])
    with pytest.raises(DataFormatError):
        weightfile.load_weights(str(p))


def test_weightfile_rejects_trailing_garbage(small_weights, tmp_path):
    p = tmp_path / "w.bw"
    weightfile.save_weights(small_weights, str(p))
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(DataFormatError):
        weightfile.load_weights(str(p))


def test_weightfile_rejects_invalid_config(tmp_path):
    # config block with zero layers must be rejected before tensor parsing
    import struct
    p = tmp_path / "bad.bw"
    blob = b"BICAMW1" + struct.pack("<10i", 8, 8, 4, 0, 2, 8, 12, 2, 0, 1)
    blob += struct.pack("<d", 1.0) + struct.pack("<i", 0)
    p.write_bytes(blob)
    with pytest.raises(DataFormatError):
        weightfile.load_weights(str(p))


def test_load_model_runs(small_weights, tmp_path):
    p = str(tmp_path / "w.bw")
    weightfile.save_weights(small_weights, p)
    model = weightfile.load_model(p)
    logits = model.predict_logits(np.zeros((1, 3, 8, 8)))
    assert np.isfinite(logits).all()


# -- csv grids -----------------------------------------------------------------------


def test_grid_csv_round_trip_bitwise(tmp_path):
    grid = np.random.default_rng(3).standard_normal((5, 7)) * 1e-3
    p = str(tmp_path / "g.csv")
    write_grid_csv(p, grid)
    assert np.array_equal(read_grid_csv(p), grid)


def test_weightfile_rejects_config_payload_mismatch(small_weights, tmp_path):
    import struct
    p = tmp_path / "w.bw"
    weightfile.save_weights(small_weights, str(p))
    raw = bytearray(p.read_bytes())
    # config block starts after the 7-byte magic; field 4 is the layer count
    offset = 7 + 3 * 4
    (layers,) = struct.unpack_from("<i", raw, offset)
    struct.pack_into("<i", raw, offset, layers + 1)
    p.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        weightfile.load_weights(str(p))
