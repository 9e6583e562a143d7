import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from src.errors import SessionFormatError
from src.session.model import BeatMatrix, DetectedSegment, EventAnnotation, RadarConfig, SleepSession, SpO2Trace
from src.session.store import (
    BEAT_NAME,
    MANIFEST_NAME,
    list_session_dirs,
    load_session,
    read_framed_file,
    read_segments,
    save_session,
    write_framed_file,
    write_segments,
)


def _session_with_beat(session_id="subject_000", duration_s=40.0):
    config = RadarConfig(frame_rate=10.0, samples_per_chirp=16)
    rng = np.random.default_rng(3)
    n = int(duration_s * config.frame_rate)
    data = (rng.standard_normal((n, 16)) + 1j * rng.standard_normal((n, 16))).astype(np.complex64)
    return SleepSession(
        id=session_id,
        spo2=SpO2Trace(np.linspace(95.0, 97.5, int(duration_s))),
        tst=duration_s / 3600.0,
        duration_s=duration_s,
        events=(EventAnnotation("OA", 2.0, 12.5), EventAnnotation("H", 15.0, 27.0)),
        beat=BeatMatrix(data, config),
    )


class SessionContainerTests(unittest.TestCase):
    def test_save_then_load_is_identical(self):
        session = _session_with_beat()
        with tempfile.TemporaryDirectory() as temp_dir:
            directory = save_session(session, Path(temp_dir) / session.id)
            for mmap in (True, False):
                self.assertEqual(load_session(directory, mmap=mmap), session)

    def test_missing_manifest_is_a_format_error(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            with self.assertRaises(SessionFormatError):
                load_session(temp_dir)

    def test_truncated_beat_file_reports_dimension_mismatch(self):
        session = _session_with_beat()
        with tempfile.TemporaryDirectory() as temp_dir:
            directory = save_session(session, Path(temp_dir) / session.id)
            beat_path = directory / BEAT_NAME
            beat_path.write_bytes(beat_path.read_bytes()[:-8])
            with self.assertRaisesRegex(SessionFormatError, "dimension mismatch"):
                load_session(directory)

    def test_load_without_beat(self):
        session = _session_with_beat()
        with tempfile.TemporaryDirectory() as temp_dir:
            directory = save_session(session, Path(temp_dir) / session.id)
            loaded = load_session(directory, with_beat=False)
            self.assertIsNone(loaded.beat)
            self.assertEqual(loaded.events, session.events)

    def test_saving_twice_gives_identical_bytes(self):
        session = _session_with_beat()
        with tempfile.TemporaryDirectory() as temp_dir:
            a = save_session(session, Path(temp_dir) / "a")
            b = save_session(session, Path(temp_dir) / "b")
            for name in (MANIFEST_NAME, BEAT_NAME, "spo2.csv", "events.jsonl"):
                self.assertEqual((a / name).read_bytes(), (b / name).read_bytes(), name)

    def test_list_session_dirs_is_sorted_and_skips_non_sessions(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            root = Path(temp_dir)
            for sid in ("subject_002", "subject_000"):
                save_session(_session_with_beat(sid), root / sid)
            (root / "notes").mkdir()
            self.assertEqual([p.name for p in list_session_dirs(root)], ["subject_000", "subject_002"])


def test_segments_jsonl_lines(tmp_path):
    path = tmp_path / "detections.jsonl"
    detections = [DetectedSegment("CA", 0.75, 10.0, 31.0), DetectedSegment("H", 0.5, 40.0, 52.0)]
    write_segments(path, detections)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines[0] == {"type": "CA", "t_start_s": 10.0, "t_end_s": 31.0, "score": 0.75}
    assert read_segments(path, detections=True) == detections


def test_events_file_rejects_unknown_fields(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text('{"type": "OA", "t_start_s": 0, "t_end_s": 20, "colour": "red"}\n')
    with pytest.raises(SessionFormatError):
        read_segments(path)


def test_detection_without_score_is_rejected(tmp_path):
    path = tmp_path / "detections.jsonl"
    path.write_text('{"type": "OA", "t_start_s": 0, "t_end_s": 20}\n')
    with pytest.raises(SessionFormatError):
        read_segments(path, detections=True)


def test_framed_file_checks_magic(tmp_path):
    path = tmp_path / "x.bin"
    write_framed_file(path, b"ABCD", {"k": 1}, [b"\x00\x01"])
    header, payload = read_framed_file(path, b"ABCD")
    assert header == {"k": 1}
    assert payload == b"\x00\x01"
    with pytest.raises(SessionFormatError):
        read_framed_file(path, b"WXYZ")


def test_framed_file_truncated_header(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"ABCD" + (100).to_bytes(4, "little") + b"{}")
    with pytest.raises(SessionFormatError, match="truncated"):
        read_framed_file(path, b"ABCD")


if __name__ == "__main__":
    unittest.main()
