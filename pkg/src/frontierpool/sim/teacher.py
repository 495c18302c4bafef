"""Virtual-time verification queue standing in for an external teacher model.

Submission never blocks. A ticket submitted at step ``t`` becomes visible
at the first drain with ``step >= t + latency_steps``; drains happen only at
the start of a training step. Verdicts travel as the single-line JSON the
teacher prompt asks for and are re-parsed on arrival.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

import numpy as np

from ..textproto import (
    AugmentCandidate,
    Reject,
    TeacherVerdict,
    parse_teacher_json,
    render_teacher_json,
)
from .policy import solve_item


class TicketStatus(str, enum.Enum):
    PENDING = "pending"
    VERIFIED = "verified"
    REJECTED = "rejected"


@dataclass
class VerificationTicket:
    ticket_id: int
    candidate: AugmentCandidate
    child_id: int
    submitted_step: int
    latency_steps: int
    status: TicketStatus = TicketStatus.PENDING
    answer: str | None = None
    reason: str | None = None
    wire: str | None = None

    @property
    def ready_step(self) -> int:
        return self.submitted_step + self.latency_steps

    def _settle(self, status: TicketStatus, answer: str | None = None, reason: str | None = None) -> None:
        if self.status is not TicketStatus.PENDING:
            raise RuntimeError(f"ticket {self.ticket_id} already {self.status.value}")
        self.status = status
        self.answer = answer
        self.reason = reason

    def log_line(self, step: int) -> dict:
        return {
            "step": step,
            "ticket": self.ticket_id,
            "child_id": self.child_id,
            "parent_id": self.candidate.parent_id,
            "submitted_step": self.submitted_step,
            "status": self.status.value,
            "answer": self.answer,
            "reason": self.reason,
        }


class VirtualTeacher:
    """Latency-bearing verifier over synthetic arithmetic items.

    A candidate whose problem parses is marked solvable with probability
    ``accept_rate``; with probability ``error_rate`` the reported answer is
    off by one.
    """

    def __init__(
        self,
        latency_steps: int,
        accept_rate: float,
        rng: np.random.Generator,
        error_rate: float = 0.0,
    ) -> None:
        if latency_steps < 0:
            raise ValueError("latency_steps must be >= 0")
        self.latency_steps = latency_steps
        self.accept_rate = accept_rate
        self.error_rate = error_rate
        self.rng = rng
        self._queue: list[tuple[int, int, VerificationTicket]] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._queue)

    def submit(self, candidate: AugmentCandidate, child_id: int, step: int) -> VerificationTicket:
        ticket = VerificationTicket(self._next_id, candidate, child_id, step, self.latency_steps)
        self._next_id += 1
        heapq.heappush(self._queue, (ticket.ready_step, ticket.ticket_id, ticket))
        return ticket

    def _verdict(self, ticket: VerificationTicket) -> TeacherVerdict:
        answer = solve_item(ticket.candidate.new_problem)
        # draws happen unconditionally so the stream does not depend on outcomes
        accept = self.rng.random() < self.accept_rate
        wrong = self.rng.random() < self.error_rate
        if answer is None or not accept:
            return TeacherVerdict(False, None)
        if wrong:
            answer = str(int(answer) + 1)
        return TeacherVerdict(True, answer)

    def drain(self, step: int) -> list[VerificationTicket]:
        """Settle and return every ticket due at or before ``step``, in submission order."""
        out = []
        while self._queue and self._queue[0][0] <= step:
            _, _, ticket = heapq.heappop(self._queue)
            ticket.wire = render_teacher_json(self._verdict(ticket))
            parsed = parse_teacher_json(ticket.wire)
            if isinstance(parsed, Reject):
                ticket._settle(TicketStatus.REJECTED, reason=parsed.reason.value)
            elif not parsed.solvable:
                ticket._settle(TicketStatus.REJECTED, reason="Unsolvable")
            else:
                ticket._settle(TicketStatus.VERIFIED, answer=parsed.answer)
            out.append(ticket)
        out.sort(key=lambda t: t.ticket_id)
        return out


def teacher_submit(queue: VirtualTeacher, candidate: AugmentCandidate, child_id: int, step: int) -> VerificationTicket:
    return queue.submit(candidate, child_id, step)


def teacher_drain(queue: VirtualTeacher, step: int) -> list[VerificationTicket]:
    return queue.drain(step)

