import pytest

from mmv.config import load_config

TINY = [
    "world.height=16", "world.width=16", "world.source_frames=6", "world.clip_frames=4",
    "world.shape_radius=[2.0, 3.0]",
    "encoder.video_widths=[4, 4, 4]", "encoder.audio_widths=[4, 4, 4]",
    "encoder.d_v=8", "encoder.d_a=8", "encoder.d_t=8",
    "graph.d_hidden=16", "augment.crop_size=14",
    "train.batch_size=4", "schedule.total_steps=4", "schedule.warmup_steps=2",
    "train.checkpoint_every=2",
]


def tiny_config(*extra):
    return load_config(None, TINY + list(extra))


@pytest.fixture
def tiny_cfg():
    return tiny_config()
