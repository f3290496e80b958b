"""Impaired communication path between aggregator and plant.

Messages cross a channel that drops a fixed fraction of them and
delays the rest by a truncated-normal latency.  The loss rate for a
run is itself uncertain: it is drawn once from a uniform band when the
channel is created, so two runs with different seeds experience
different (but internally constant) loss.  Payloads are never altered;
delay can reorder deliveries, and the receiver is expected to discard
stale commands by sequence number.

By default only the command path (aggregator to plant) is impaired;
measurements ride a clean return path unless symmetric impairment is
requested.
"""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


class ChannelMode(enum.Enum):
    PERFECT = "perfect"
    IMPAIRED = "impaired"


@dataclass(frozen=True)
class ChannelModel:
    """Channel configuration.  Times in seconds, rates as fractions."""
    delay_mean: float = 18.0
    delay_std: float = 3.0
    loss_rate_min: float = 0.05
    loss_rate_max: float = 0.10
    rng_seed: int = 0
    mode: ChannelMode = ChannelMode.IMPAIRED
    redraw_loss_per_message: bool = False
    impair_measurements: bool = False

    def __post_init__(self):
        if self.delay_std < 0.0:
            raise ValueError("delay_std must be >= 0")
        if not 0.0 <= self.loss_rate_min <= self.loss_rate_max <= 1.0:
            raise ValueError("need 0 <= loss_rate_min <= loss_rate_max <= 1")


class Channel:
    """One direction of the link.  Stateful: owns the RNG and the drawn
    loss rate."""

    def __init__(self, model: ChannelModel, rng: np.random.Generator = None):
        self.model = model
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence(
                model.rng_seed))
        self._rng = rng
        self.loss_rate = float(self._rng.uniform(model.loss_rate_min,
                                                 model.loss_rate_max))

    def transmit(self, message: Any, send_time: float
                 ) -> Optional[tuple[Any, float]]:
        """Send one message.  Returns ``(message, deliver_time)`` or
        ``None`` if the channel ate it.  The payload object passes
        through untouched."""
        if self.model.mode is ChannelMode.PERFECT:
            return message, send_time
        rate = self.loss_rate
        if self.model.redraw_loss_per_message:
            rate = float(self._rng.uniform(self.model.loss_rate_min,
                                           self.model.loss_rate_max))
        if self._rng.random() < rate:
            return None
        delay = max(0.0, self._rng.normal(self.model.delay_mean,
                                          self.model.delay_std))
        return message, send_time + delay


def transmit(channel: Channel, message: Any, send_time: float
             ) -> Optional[tuple[Any, float]]:
    return channel.transmit(message, send_time)


@dataclass
class DelayQueue:
    """Holds in-flight messages until their delivery time.

    Ties on delivery time release in send order, but distinct delays
    reorder freely, exactly as the channel permits.
    """
    _heap: list = field(default_factory=list)
    _counter: int = 0

    def push(self, message: Any, deliver_time: float) -> None:
        heapq.heappush(self._heap, (deliver_time, self._counter, message))
        self._counter += 1

    def pop_due(self, now: float) -> list[Any]:
        out = []
        while self._heap and self._heap[0][0] <= now:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def __len__(self) -> int:
        return len(self._heap)


def command_channel(model: ChannelModel) -> Channel:
    """Channel instance for the aggregator-to-plant direction."""
    cmd_seq = np.random.SeedSequence(model.rng_seed).spawn(2)[0]
    return Channel(model, rng=np.random.default_rng(cmd_seq))


def measurement_channel(model: ChannelModel) -> Channel:
    """Channel instance for the plant-to-aggregator direction.

    Perfect unless symmetric impairment was asked for.  Spawned from
    the same seed as the command direction but on an independent
    stream, so the two directions never share randomness.
    """
    if model.mode is ChannelMode.IMPAIRED and model.impair_measurements:
        mode = ChannelMode.IMPAIRED
    else:
        mode = ChannelMode.PERFECT
    meas_model = ChannelModel(
        delay_mean=model.delay_mean, delay_std=model.delay_std,
        loss_rate_min=model.loss_rate_min,
        loss_rate_max=model.loss_rate_max,
        rng_seed=model.rng_seed, mode=mode,
        redraw_loss_per_message=model.redraw_loss_per_message,
        impair_measurements=model.impair_measurements)
    meas_seq = np.random.SeedSequence(model.rng_seed).spawn(2)[1]
    return Channel(meas_model, rng=np.random.default_rng(meas_seq))
