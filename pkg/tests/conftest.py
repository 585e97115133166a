from __future__ import annotations

import json

import pytest

from coordwatch.datamodel import ChannelRecord, Dataset, PostRecord, VideoRecord, save_dataset
from coordwatch.synth import bundled_fixture

T0 = 1_522_540_800


def make_dataset(posts, videos=(), channels=()) -> Dataset:
    """Build a Dataset from short tuples.

    posts: (post_id, user_id, time_offset, text, video_id[, platform])
    videos: (video_id, channel_id)
    channels: (channel_id, factuality or None)
    """
    recs = []
    for row in posts:
        pid, uid, dt, text, vid = row[:5]
        platform = row[5] if len(row) > 5 else "twitter"
        recs.append(PostRecord(pid, uid, platform, T0 + dt, text, "post", vid))
    vids = {v: VideoRecord(v, f"title {v}", c) for v, c in videos}
    chans = {c: ChannelRecord(c, f"name {c}", f) for c, f in channels}
    return Dataset(recs, vids, chans)


@pytest.fixture
def seven_node_ds() -> Dataset:
    """Users A, B; posts p1, p2 by A and p3 by B; all link video V on channel C."""
    return make_dataset(
        [("p1", "A", 0, "white helmets", "V"), ("p2", "A", 5, "helmets", "V"), ("p3", "B", 9, "russia", "V")],
        [("V", "C")],
        [("C", 0)],
    )


@pytest.fixture
def fixture_dir():
    return bundled_fixture()


def write_raw(tmp_path, posts=None, videos=None, channels_csv="channel_id,name,factuality\n"):
    """Write raw input files; posts/videos are lists of dicts or raw lines."""
    def dump(name, rows):
        path = tmp_path / name
        lines = [r if isinstance(r, str) else json.dumps(r) for r in (rows or [])]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path

    p = dump("posts.jsonl", posts)
    v = dump("videos.jsonl", videos)
    c = tmp_path / "channels.csv"
    c.write_text(channels_csv, encoding="utf-8")
    return p, v, c


def post_row(pid, vid="v1", when="2018-04-01T00:00:00Z", user="u1", text="hello"):
    return {"post_id": pid, "user_id": user, "platform": "twitter", "published_time": when, "text": text,
            "action_type": "post", "video_id": vid}


def saved(ds, tmp_path):
    save_dataset(ds, tmp_path)
    return tmp_path


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
