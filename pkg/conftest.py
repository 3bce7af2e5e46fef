"""
Shared pytest fixtures: synthetic hand/eye bundles generated once per session
"""

import logging
import os

import pytest

from services.synthetic_generator import generate_bundle
from services.trajectory_io import write_tum

logging.getLogger().setLevel(os.getenv("HANDEYE_LOG_LEVEL", "WARNING").upper())


@pytest.fixture(scope="session")
def mc_seeds():
    """Seed count for Monte-Carlo trend checks (the acceptance runs use 20)."""
    return int(os.getenv("HANDEYE_MC_SEEDS", "5"))


@pytest.fixture(scope="session")
def clean_bundle():
    """Noise-free figure-eight run with a random extrinsic and clock offset.

    The eye clock is locked to the hand lattice so shifted eye samples land on hand samples.
    """
    return generate_bundle(preset="figure8", level=0, seed=1, duration=30.0, eye_phase=0.0)


@pytest.fixture(scope="session")
def noisy_bundle():
    return generate_bundle(preset="figure8", level=5, seed=1, duration=30.0)


@pytest.fixture(scope="session")
def short_clean_bundle():
    """Short noise-free run with a known offset for the refinement tests."""
    return generate_bundle(preset="figure8", level=0, seed=3, duration=12.0, dt=0.3, max_offset=0.5, eye_phase=0.0)


@pytest.fixture
def bundle_files(tmp_path, clean_bundle):
    """The clean bundle written as TUM files: (hand path, eye path)."""
    hand_path = tmp_path / "hand.txt"
    eye_path = tmp_path / "eye.txt"
    write_tum(clean_bundle.hand, hand_path)
    write_tum(clean_bundle.eye_noisy, eye_path)
    return hand_path, eye_path
