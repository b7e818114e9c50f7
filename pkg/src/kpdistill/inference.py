"""Three-stage student inference under configurable topologies.

A topology names which stages run (component ablations) and which endpoint
serves each role (model-quantity ablations). The solve-stage input is built
by the same routine the dataset exporter uses, so training and inference
inputs are byte-identical for the same components.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import requests

from .client import EndpointConfig, check_health, post_chat_completion
from .codec import NoAnswerFound, extract_final_answer
from .errors import PipelineError
from .prompts import RolePrompts, build_core_input, build_info_input, build_solve_input
from .records import FailureMode, Format, InferenceTrace, MathProblem, NumericAnswer, Role
from .sandbox import ExecLimits, ExecStatus, execute_program


class TopologyError(PipelineError):
    pass


class EndpointsUnhealthy(PipelineError):
    pass


@dataclass(frozen=True)
class Topology:
    """Enabled stages plus role -> endpoint-index routing (indices 1-based)."""

    id: str
    stages: frozenset[Role]
    role_assignment: Mapping[Role, int]
    format: Format

    def __post_init__(self) -> None:
        if Role.SOLVE not in self.stages:
            raise TopologyError(f"topology {self.id!r}: solve stage is required")
        missing = self.stages - set(self.role_assignment)
        if missing:
            raise TopologyError(
                f"topology {self.id!r}: no endpoint assigned for {sorted(r.value for r in missing)}"
            )
        indices = sorted({self.role_assignment[r] for r in self.stages})
        if indices != list(range(1, len(indices) + 1)):
            raise TopologyError(
                f"topology {self.id!r}: endpoint indices must be dense from 1, got {indices}"
            )

    @property
    def endpoint_count(self) -> int:
        return max(self.role_assignment[r] for r in self.stages)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "stages": sorted(r.value for r in self.stages),
            "role_assignment": {r.value: i for r, i in self.role_assignment.items()},
            "format": self.format.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Topology":
        return cls(
            id=str(data["id"]),
            stages=frozenset(Role(s) for s in data["stages"]),
            role_assignment={Role(r): int(i) for r, i in data["role_assignment"].items()},
            format=Format(data["format"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class StudentEndpoint:
    """A student model server speaking the chat-completions protocol."""

    base_url: str
    model_name: str
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 2
    api_key_env_var: Optional[str] = None

    def endpoint_config(self) -> EndpointConfig:
        return EndpointConfig(
            base_url=self.base_url,
            model_name=self.model_name,
            api_key_env_var=self.api_key_env_var,
            request_timeout=self.timeout,
            max_retries=self.max_retries,
            backoff_schedule=(0.2, 0.5),
        )


def _ask(
    endpoint: StudentEndpoint, prompt: str, session: requests.Session
) -> str:
    completion = post_chat_completion(
        session,
        endpoint.endpoint_config(),
        prompt,
        temperature=endpoint.temperature,
        top_p=endpoint.top_p,
        max_tokens=endpoint.max_tokens,
    )
    return completion.text


def infer(
    problem: MathProblem,
    topology: Topology,
    endpoints: Sequence[StudentEndpoint],
    limits: Optional[ExecLimits] = None,
    prompts: Optional[RolePrompts] = None,
    session: Optional[requests.Session] = None,
) -> InferenceTrace:
    """Run the enabled stages for one problem; failures are recorded, not raised."""
    prompts = prompts or RolePrompts()
    session = session or requests.Session()
    if topology.endpoint_count > len(endpoints):
        raise TopologyError(
            f"topology {topology.id!r} needs {topology.endpoint_count} endpoints, "
            f"got {len(endpoints)}"
        )

    def endpoint_for(role: Role) -> StudentEndpoint:
        return endpoints[topology.role_assignment[role] - 1]

    latencies: dict[str, float] = {}
    core_out: Optional[str] = None
    info_out: Optional[str] = None

    def timed_ask(role: Role, prompt: str) -> str:
        start = time.monotonic()
        try:
            return _ask(endpoint_for(role), prompt, session)
        finally:
            latencies[role.value] = time.monotonic() - start

    solve_out = ""
    try:
        if Role.CORE in topology.stages:
            core_out = timed_ask(Role.CORE, build_core_input(problem.question, prompts))
        if Role.INFO in topology.stages:
            info_out = timed_ask(Role.INFO, build_info_input(problem.question, prompts))
        solve_input = build_solve_input(
            problem.question, core_out, info_out, topology.format, prompts
        )
        solve_out = timed_ask(Role.SOLVE, solve_input)
    except PipelineError:
        return InferenceTrace(
            problem_id=problem.id,
            topology_id=topology.id,
            core_out=core_out,
            info_out=info_out,
            solve_out=solve_out,
            predicted=None,
            failure=FailureMode.ENDPOINT_ERROR,
            stage_latencies=latencies,
        )

    predicted: Optional[NumericAnswer] = None
    failure: Optional[FailureMode] = None
    if topology.format is Format.COT:
        try:
            predicted = extract_final_answer(solve_out)
        except NoAnswerFound:
            failure = FailureMode.NO_ANSWER_FOUND
    else:
        result = execute_program(solve_out, limits or ExecLimits()) if solve_out.strip() else None
        if result is None:
            failure = FailureMode.EXEC_ERROR
        elif result.status is ExecStatus.OK:
            predicted = result.ans
        elif result.status is ExecStatus.TIMEOUT:
            failure = FailureMode.EXEC_TIMEOUT
        else:
            failure = FailureMode.EXEC_ERROR

    return InferenceTrace(
        problem_id=problem.id,
        topology_id=topology.id,
        core_out=core_out,
        info_out=info_out,
        solve_out=solve_out,
        predicted=predicted,
        failure=failure,
        stage_latencies=latencies,
    )


@dataclass(frozen=True)
class BatchSummary:
    n: int
    predicted: int
    failure_counts: Mapping[str, int] = field(default_factory=dict)
    latency_percentiles: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "predicted": self.predicted,
            "failure_counts": dict(sorted(self.failure_counts.items())),
            "latency_percentiles": dict(self.latency_percentiles),
        }


def _percentiles(values: list[float]) -> dict[str, float]:
    if not values:
        return {}
    ordered = sorted(values)

    def pct(p: float) -> float:
        idx = min(len(ordered) - 1, max(0, round(p * (len(ordered) - 1))))
        return ordered[idx]

    return {"p50": pct(0.50), "p95": pct(0.95), "p99": pct(0.99)}


def infer_batch(
    problems: Sequence[MathProblem],
    topology: Topology,
    endpoints: Sequence[StudentEndpoint],
    limits: Optional[ExecLimits] = None,
    prompts: Optional[RolePrompts] = None,
    max_workers: int = 4,
    skip_health_check: bool = False,
) -> tuple[list[InferenceTrace], BatchSummary]:
    """Run inference over a benchmark with bounded parallelism.

    All endpoints the topology routes to must pass a health check before the
    batch starts; per-problem failures afterwards never abort the batch.
    """
    used = sorted({topology.role_assignment[r] for r in topology.stages})
    if not skip_health_check:
        down = [
            endpoints[i - 1].base_url
            for i in used
            if not check_health(endpoints[i - 1].base_url, timeout=endpoints[i - 1].timeout)
        ]
        if down:
            raise EndpointsUnhealthy(f"endpoints failed health check: {down}")

    session = requests.Session()

    def run_one(problem: MathProblem) -> InferenceTrace:
        return infer(problem, topology, endpoints, limits=limits, prompts=prompts, session=session)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        traces = list(pool.map(run_one, problems))

    failure_counts: dict[str, int] = {}
    for trace in traces:
        if trace.failure:
            failure_counts[trace.failure.value] = failure_counts.get(trace.failure.value, 0) + 1
    totals = [sum(t.stage_latencies.values()) for t in traces if t.stage_latencies]
    summary = BatchSummary(
        n=len(traces),
        predicted=sum(1 for t in traces if t.predicted is not None),
        failure_counts=failure_counts,
        latency_percentiles=_percentiles(totals),
    )
    return traces, summary
