"""Named pass/fail checks with a one-line-per-check text rendering."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float = float("nan")
    bound: float = float("nan")
    detail: str = ""
    required: bool = True

    def line(self) -> str:
        status = "PASS" if self.passed else ("FAIL" if self.required else "info-FAIL")
        text = f"{self.name:<44s} {status}  measured={self.value:.6g}  bound={self.bound:.6g}"
        if self.detail:
            text += f"  ({self.detail})"
        return text


@dataclass
class Report:
    title: str = ""
    checks: list[Check] = field(default_factory=list)

    def add(self, name, passed, value=float("nan"), bound=float("nan"), detail="", required=True):
        self.checks.append(
            Check(name, bool(passed), float(value), float(bound), detail, required)
        )
        return self.checks[-1]

    def extend(self, other: "Report", prefix: str = ""):
        for c in other.checks:
            self.checks.append(
                Check(prefix + c.name, c.passed, c.value, c.bound, c.detail, c.required)
            )

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.required and not c.passed]

    def __str__(self) -> str:
        lines = [f"# {self.title}"] if self.title else []
        lines += [c.line() for c in self.checks]
        return "\n".join(lines)
