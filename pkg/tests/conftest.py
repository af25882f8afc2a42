from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "taskscope",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("taskscope")


@pytest.fixture
def runtime():
    from taskscope.tasking import Runtime, SchedulerConfig

    rt = Runtime(SchedulerConfig(worker_count=4))
    yield rt
    rt.shutdown()
