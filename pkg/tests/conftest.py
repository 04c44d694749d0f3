"""Shared fixtures: small synthetic sessions that several suites reuse.

The smoke scene is deliberately tiny (320x240, 16 frames) so pipeline
tests stay under a second. It is built once per test run.
"""

from __future__ import annotations

import pytest

from groundmapper.pipeline import PipelineConfig, process_session
from groundmapper.synth import NoiseSpec, build_session, builtin_scene


@pytest.fixture(scope="session")
def smoke_session():
    return build_session(builtin_scene("smoke"), NoiseSpec(), session_id="smoke-test")


@pytest.fixture(scope="session")
def smoke_results(smoke_session):
    return process_session(smoke_session, PipelineConfig())
