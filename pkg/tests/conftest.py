import pytest

from lmpcq.task import TaskConfig, run_task


@pytest.fixture(scope="session")
def default_run():
    """One complete learning run at package defaults, shared by the suite.

    Bootstrap plus six learned laps on the L-track; this is the workload the
    acceptance criteria are stated against.
    """
    return run_task(TaskConfig())
