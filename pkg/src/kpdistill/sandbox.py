"""Sandboxed execution of teacher/student-generated programs.

Programs run in a fresh interpreter subprocess, never in-process. OS rlimits
enforce the memory ceiling and a CPU backstop; wall-clock timeout kills the
child; an injected import guard disables socket access. The harness appends
a sentinel print of the top-level ``ans`` binding and parses it from stdout.
"""

from __future__ import annotations

import ast
import enum
import functools
import re
import resource
import subprocess
import sys
import tempfile
import time
import uuid
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Mapping, Optional

from .codec import NotANumber, normalize_number
from .errors import PipelineError
from .records import NumericAnswer

_SOCKET_GUARD = """\
import socket as _socket


def _blocked(*args, **kwargs):
    raise PermissionError("network access is disabled in the execution sandbox")


_socket.socket = _blocked
_socket.create_connection = _blocked
_socket.socketpair = _blocked
_socket.create_server = _blocked
"""

_HARNESS_FOOTER = """

import sys as _sandbox_sys
try:
    _sandbox_val = ans
except NameError:
    _sandbox_sys.stdout.write("\\n{sentinel}:missing\\n")
else:
    _sandbox_sys.stdout.write("\\n{sentinel}:" + repr(_sandbox_val) + "\\n")
"""


class SandboxSpawnFailure(PipelineError):
    """The sandbox itself could not start (environment fault, not program fault)."""


class ExecStatus(enum.Enum):
    OK = "ok"
    EXCEPTION = "exception"
    TIMEOUT = "timeout"
    RESOURCE_KILL = "resource_kill"
    NO_ANS_VARIABLE = "no_ans_variable"


@dataclass(frozen=True)
class ExecLimits:
    """Resource ceilings for one program execution."""

    timeout_s: float = 5.0
    memory_bytes: int = 256 * 1024 * 1024
    output_cap_bytes: int = 64 * 1024
    interpreter: str = sys.executable

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "timeout_s": self.timeout_s,
            "memory_bytes": self.memory_bytes,
            "output_cap_bytes": self.output_cap_bytes,
            "interpreter": self.interpreter,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExecLimits":
        return cls(
            timeout_s=float(data.get("timeout_s", 5.0)),
            memory_bytes=int(data.get("memory_bytes", 256 * 1024 * 1024)),
            output_cap_bytes=int(data.get("output_cap_bytes", 64 * 1024)),
            interpreter=str(data.get("interpreter", sys.executable)),
        )


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    ans: Optional[NumericAnswer]
    stderr_tail: str
    duration: float
    interpreter_version: str = ""

    def __post_init__(self) -> None:
        if (self.ans is not None) != (self.status is ExecStatus.OK):
            raise ValueError("ans must be present iff status is ok")


@functools.lru_cache(maxsize=8)
def interpreter_version(interpreter: str) -> str:
    try:
        out = subprocess.run(
            [interpreter, "--version"], capture_output=True, text=True, timeout=10
        )
        return (out.stdout or out.stderr).strip()
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"


def _coerce_ans(payload: str) -> Optional[Decimal]:
    """Interpret the repr of the program's ans binding as a number."""
    try:
        value = ast.literal_eval(payload)
    except (ValueError, SyntaxError):
        return None
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        try:
            return Decimal(str(value))
        except InvalidOperation:
            return None
    if isinstance(value, str):
        try:
            return normalize_number(value)
        except NotANumber:
            return None
    return None


def execute_program(source: str, limits: ExecLimits) -> ExecutionResult:
    """Run untrusted program text and capture its ``ans`` binding."""
    if not source.strip():
        raise ValueError("program source must be non-empty")
    sentinel = f"__ANS_{uuid.uuid4().hex}__"
    version = interpreter_version(limits.interpreter)

    with tempfile.TemporaryDirectory(prefix="kpd-sandbox-") as scratch:
        scratch_path = Path(scratch)
        guard_dir = scratch_path / "guard"
        guard_dir.mkdir()
        (guard_dir / "sitecustomize.py").write_text(_SOCKET_GUARD, encoding="utf-8")
        program_path = scratch_path / "program.py"
        program_path.write_text(
            source + _HARNESS_FOOTER.format(sentinel=sentinel), encoding="utf-8"
        )

        mem = limits.memory_bytes
        cpu_s = max(1, int(limits.timeout_s) + 1)

        def apply_rlimits() -> None:
            resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_s, cpu_s))
            resource.setrlimit(resource.RLIMIT_FSIZE, (16 * 1024 * 1024, 16 * 1024 * 1024))

        env = {
            "PYTHONPATH": str(guard_dir),
            "PYTHONDONTWRITEBYTECODE": "1",
            "PATH": "/usr/bin:/bin",
        }
        start = time.monotonic()
        try:
            proc = subprocess.run(
                [limits.interpreter, str(program_path)],
                capture_output=True,
                timeout=limits.timeout_s,
                cwd=scratch,
                env=env,
                preexec_fn=apply_rlimits,
            )
        except subprocess.TimeoutExpired:
            return ExecutionResult(
                status=ExecStatus.TIMEOUT,
                ans=None,
                stderr_tail="",
                duration=time.monotonic() - start,
                interpreter_version=version,
            )
        except OSError as exc:
            raise SandboxSpawnFailure(f"could not spawn sandbox interpreter: {exc}") from exc

        duration = time.monotonic() - start
        cap = limits.output_cap_bytes
        stdout = proc.stdout[:cap].decode("utf-8", errors="replace")
        stderr = proc.stderr[-cap:].decode("utf-8", errors="replace")
        stderr_tail = stderr[-2000:]

        if proc.returncode != 0:
            killed = proc.returncode < 0
            out_of_memory = "MemoryError" in stderr or re.search(r"\bKilled\b", stderr)
            status = ExecStatus.RESOURCE_KILL if (killed or out_of_memory) else ExecStatus.EXCEPTION
            return ExecutionResult(
                status=status,
                ans=None,
                stderr_tail=stderr_tail,
                duration=duration,
                interpreter_version=version,
            )

        payload = None
        for line in reversed(stdout.splitlines()):
            if line.startswith(sentinel + ":"):
                payload = line[len(sentinel) + 1 :]
                break
        if payload is None or payload == "missing":
            return ExecutionResult(
                status=ExecStatus.NO_ANS_VARIABLE,
                ans=None,
                stderr_tail=stderr_tail,
                duration=duration,
                interpreter_version=version,
            )
        value = _coerce_ans(payload)
        if value is None:
            return ExecutionResult(
                status=ExecStatus.NO_ANS_VARIABLE,
                ans=None,
                stderr_tail=f"ans is not numeric: {payload[:200]}",
                duration=duration,
                interpreter_version=version,
            )
        return ExecutionResult(
            status=ExecStatus.OK,
            ans=NumericAnswer(value=value, raw=payload),
            stderr_tail=stderr_tail,
            duration=duration,
            interpreter_version=version,
        )
