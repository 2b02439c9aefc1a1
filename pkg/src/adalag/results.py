"""Finalised marginal estimates and their text serialisations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable

KALMAN_COLUMNS = ("s", "stop_time", "lag", "estimate", "variance_at_stop")
STREAM_COLUMNS = KALMAN_COLUMNS + ("truncated",)


@dataclass(frozen=True)
class SmoothedMarginal:
    """Output for marginal ``s``: the estimate frozen at ``stop_time``.

    ``truncated_by_horizon`` marks estimators that were still active when the
    observation stream ended; their variance may exceed the tolerance.
    """

    s: int
    estimate: float
    stop_time: int
    variance_at_stop: float
    truncated_by_horizon: bool = False

    @property
    def lag(self) -> int:
        return self.stop_time - self.s

    def as_row(self, columns=STREAM_COLUMNS) -> list[str]:
        values = {
            "s": str(self.s),
            "stop_time": str(self.stop_time),
            "lag": str(self.lag),
            "estimate": format(self.estimate, ".17g"),
            "variance_at_stop": format(self.variance_at_stop, ".17g"),
            "truncated": str(int(self.truncated_by_horizon)),
        }
        return [values[c] for c in columns]


def write_marginals(marginals: Iterable[SmoothedMarginal], fh: IO[str],
                    columns=STREAM_COLUMNS, header: bool = True) -> None:
    if header:
        fh.write(",".join(columns) + "\n")
    for m in marginals:
        fh.write(",".join(m.as_row(columns)) + "\n")
