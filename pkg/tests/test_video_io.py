"""
Tests for video files and parameter checkpoints.
"""

import dataclasses
import struct
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest
from PIL import Image

from chunkvid.checkpoint import load_checkpoint, save_checkpoint
from chunkvid.denoiser import DenoiserConfig, init_params
from chunkvid.errors import FormatError, VideoReadError
from chunkvid.random_source import RandomSource
from chunkvid.scorers import FrameSequence
from chunkvid.video_io import (
    LVT_MAGIC,
    read_frame_dir,
    read_lvt,
    read_video,
    write_frame_dir,
    write_lvt,
)


def quantised_video(frames=3, size=4, channels=3, seed=0):
    """Frames whose values survive both float32 and 8-bit storage."""
    rng = np.random.default_rng(seed)
    return FrameSequence(rng.integers(0, 256, size=(frames, size, size, channels)) / 255.0)


def small_config():
    return DenoiserConfig(d_model=8, n_heads=2, n_layers=1, head_dim=4, chunk_len=2,
                          latent_dim=4, embed_dim=3).validate()


class TestLvt:
    """Test cases for .lvt video files."""

    def test_round_trip(self):
        video = FrameSequence(np.arange(2 * 3 * 3).reshape(2, 3, 3, 1) / 32.0)
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            write_lvt(video, path)
            loaded = read_video(path)
        assert np.array_equal(loaded.frames, video.frames)

    def test_float32_storage(self):
        video = FrameSequence(np.full((2, 2, 2, 3), 0.1))
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            write_lvt(video, path)
            loaded = read_lvt(path)
        assert np.allclose(loaded.frames, 0.1, atol=1e-7)

    def test_bad_magic(self):
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            path.write_bytes(struct.pack("<4sH4I", b"NOPE", 1, 2, 1, 1, 1) + b"\0" * 8)
            with pytest.raises(FormatError, match="bad magic"):
                read_lvt(path)

    def test_truncated(self):
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            path.write_bytes(struct.pack("<4sH4I", LVT_MAGIC, 1, 2, 2, 2, 1) + b"\0" * 4)
            with pytest.raises(FormatError):
                read_lvt(path)

    def test_wrong_version(self):
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            path.write_bytes(struct.pack("<4sH4I", LVT_MAGIC, 9, 2, 1, 1, 1) + b"\0" * 8)
            with pytest.raises(FormatError, match="version"):
                read_lvt(path)

    def test_values_out_of_range(self):
        """A payload outside [0, 1] is a format error, not a crash."""
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "clip.lvt"
            payload = np.array([0.5, 2.0], dtype="<f4").tobytes()
            path.write_bytes(struct.pack("<4sH4I", LVT_MAGIC, 1, 2, 1, 1, 1) + payload)
            with pytest.raises(FormatError):
                read_lvt(path)

    def test_missing_file(self):
        with TemporaryDirectory() as tmpdir:
            with pytest.raises(VideoReadError):
                read_video(Path(tmpdir) / "absent.lvt")


class TestFrameDirectory:
    """Test cases for PGM/PPM frame directories."""

    @pytest.mark.parametrize("channels", [1, 3])
    def test_round_trip(self, channels):
        video = quantised_video(channels=channels)
        with TemporaryDirectory() as tmpdir:
            write_frame_dir(video, tmpdir)
            loaded = read_video(tmpdir)
        assert np.allclose(loaded.frames, video.frames, atol=1e-12)

    def test_lexicographic_order(self):
        video = quantised_video(frames=3, channels=1)
        with TemporaryDirectory() as tmpdir:
            for i, name in enumerate(["b.pgm", "c.pgm", "a.pgm"]):
                data = np.round(video.frames[i, ..., 0] * 255).astype(np.uint8)
                Image.fromarray(data).save(Path(tmpdir) / name, format="PPM")
            loaded = read_frame_dir(tmpdir)
        assert np.allclose(loaded.frames[0], video.frames[2], atol=1e-12)
        assert np.allclose(loaded.frames[1], video.frames[0], atol=1e-12)

    def test_other_files_ignored(self):
        with TemporaryDirectory() as tmpdir:
            write_frame_dir(quantised_video(), tmpdir)
            (Path(tmpdir) / "notes.txt").write_text("ignore me")
            assert len(read_frame_dir(tmpdir)) == 3

    def test_too_few_frames(self):
        with TemporaryDirectory() as tmpdir:
            with pytest.raises(VideoReadError, match="need at least 2"):
                read_frame_dir(tmpdir)

    def test_corrupt_frame(self):
        with TemporaryDirectory() as tmpdir:
            write_frame_dir(quantised_video(channels=1), tmpdir)
            (Path(tmpdir) / "frame_00001.pgm").write_bytes(b"not an image")
            with pytest.raises(VideoReadError):
                read_frame_dir(tmpdir)

    @pytest.mark.parametrize("name,text", [
        ("frame_00001.pgm", "P2\n2 2\n255\n0 64\n128 255\n"),
        ("frame_00001.ppm", "P3\n1 1\n255\n10 20 30\n"),
    ])
    def test_ascii_frames_rejected(self, name, text):
        """Plain-text P2/P3 files decode in Pillow but are not accepted as frames."""
        with TemporaryDirectory() as tmpdir:
            write_frame_dir(quantised_video(channels=1), tmpdir)
            (Path(tmpdir) / "frame_00001.pgm").unlink()
            (Path(tmpdir) / name).write_text(text)
            with pytest.raises(VideoReadError, match="not binary PGM/PPM"):
                read_frame_dir(tmpdir)

    def test_mixed_shapes(self):
        with TemporaryDirectory() as tmpdir:
            for name, rows in (("a.pgm", 4), ("b.pgm", 5)):
                Image.fromarray(np.zeros((rows, 4), dtype=np.uint8)).save(
                    Path(tmpdir) / name, format="PPM"
                )
            with pytest.raises(VideoReadError, match="differs"):
                read_frame_dir(tmpdir)


class TestCheckpoint:
    """Test cases for parameter checkpoints."""

    def test_round_trip(self):
        cfg = small_config()
        params = init_params(cfg, RandomSource(3), zero_output=False)
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            save_checkpoint(path, cfg, params)
            loaded_cfg, loaded = load_checkpoint(path)
        assert loaded_cfg == cfg
        assert loaded.keys() == params.keys()
        for name in params:
            assert np.array_equal(loaded[name].data, params[name].data)

    def test_bad_magic(self):
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            path.write_bytes(b"XXXX\x01\x00")
            with pytest.raises(FormatError, match="bad magic"):
                load_checkpoint(path)

    def test_truncated(self):
        cfg = small_config()
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            save_checkpoint(path, cfg, init_params(cfg, RandomSource(0)))
            path.write_bytes(path.read_bytes()[:-5])
            with pytest.raises(FormatError, match="truncated"):
                load_checkpoint(path)

    def test_trailing_bytes(self):
        cfg = small_config()
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            save_checkpoint(path, cfg, init_params(cfg, RandomSource(0)))
            path.write_bytes(path.read_bytes() + b"\0")
            with pytest.raises(FormatError, match="trailing"):
                load_checkpoint(path)

    def test_corrupt_parameter_name(self):
        """A name that is not UTF-8 is a format error, not a decode crash."""
        cfg = small_config()
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            save_checkpoint(path, cfg, init_params(cfg, RandomSource(0)))
            payload = bytearray(path.read_bytes())
            (config_len,) = struct.unpack_from("<I", payload, 6)
            first_name = 6 + 4 + config_len + 4 + 2
            payload[first_name] = 0xFF
            path.write_bytes(bytes(payload))
            with pytest.raises(FormatError, match="parameter name is not UTF-8") as exc_info:
                load_checkpoint(path)
        assert exc_info.value.exit_code == 4

    def test_params_must_match_config(self):
        """Parameters of a two-layer model do not load under a one-layer config."""
        cfg = small_config()
        deeper = dataclasses.replace(cfg, n_layers=2).validate()
        with TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "model.lvck"
            save_checkpoint(path, cfg, init_params(deeper, RandomSource(0)))
            with pytest.raises(FormatError, match="do not match"):
                load_checkpoint(path)
