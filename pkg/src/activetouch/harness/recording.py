"""Line-delimited JSON trial recordings: one header line, then one observation per line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..geometry.priors import Hypothesis
from ..geometry.transforms import Pose
from ..observations import StepObservation

FORMAT_VERSION = 1


class RecordingError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class Recording:
    config: dict
    config_hash: str
    seed: int
    mask: str
    truth: Hypothesis
    observations: list = field(default_factory=list)
    # per-step list of (F, T, probe_pose) wrench samples; informational only
    wrenches: list = field(default_factory=list)

    def header(self) -> dict:
        return {
            "kind": "header",
            "version": FORMAT_VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "seeds": {"world": [self.seed, 1], "filter": [self.seed, 2]},
            "mask": self.mask,
            "truth": {"class_id": self.truth.class_id, "pose": self.truth.pose.to_list()},
            "config": self.config,
        }

    def lines(self):
        yield json.dumps(self.header(), sort_keys=True)
        for k, obs in enumerate(self.observations):
            row = {"kind": "obs", **obs.to_dict()}
            if k < len(self.wrenches):
                row["wrenches"] = self.wrenches[k]
            yield json.dumps(row, sort_keys=True)

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path


def _parse_line(path, no, text):
    try:
        row = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordingError(path, no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(row, dict) or "kind" not in row:
        raise RecordingError(path, no, "expected an object with a 'kind' field")
    return row


def loads(text: str, path="<recording>") -> Recording:
    rows = [(no, line) for no, line in enumerate(text.splitlines(), 1) if line.strip()]
    if not rows:
        raise RecordingError(path, 1, "empty recording")
    no, first = rows[0]
    head = _parse_line(path, no, first)
    if head["kind"] != "header":
        raise RecordingError(path, no, "first line must be the header")
    if head.get("version") != FORMAT_VERSION:
        raise RecordingError(path, no, f"unsupported version {head.get('version')!r}")
    try:
        truth = Hypothesis(int(head["truth"]["class_id"]), Pose.from_list(head["truth"]["pose"]))
        rec = Recording(head["config"], head["config_hash"], int(head["seed"]), head["mask"], truth)
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordingError(path, no, f"bad header ({exc})") from None
    last = -1
    for no, line in rows[1:]:
        row = _parse_line(path, no, line)
        if row["kind"] != "obs":
            raise RecordingError(path, no, f"unexpected record kind {row['kind']!r}")
        try:
            obs = StepObservation.from_dict(row)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordingError(path, no, f"bad observation ({exc})") from None
        if obs.step <= last:
            raise RecordingError(path, no, "steps must be strictly increasing")
        last = obs.step
        rec.observations.append(obs)
        rec.wrenches.append(row.get("wrenches", []))
    return rec


def load(path) -> Recording:
    return loads(Path(path).read_text(), str(path))
