"""Forward/backward pass accounting shared by the optimizer and decoder."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class PassCounter:
    """Exact call counts (not estimates) for one pipeline session."""

    base_forwards: int = 0
    cf_forwards: int = 0
    grad_passes: int = 0

    def snapshot(self) -> dict:
        return {"base_forwards": self.base_forwards,
                "cf_forwards": self.cf_forwards,
                "grad_passes": self.grad_passes}

    def add(self, other: "PassCounter") -> None:
        self.base_forwards += other.base_forwards
        self.cf_forwards += other.cf_forwards
        self.grad_passes += other.grad_passes
