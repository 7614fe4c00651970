"""Genetic-algorithm advisor: evolves per-sensor action lists against a history
of analyst-labeled episodes and ranks proposals for the monitoring team.

Advice is never auto-applied; the hub and operators stay in the loop.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .types import SensorRole, ValidationError, decode_system_string

ACTIONS = ("escalate", "power_save", "hold")


@dataclass(frozen=True)
class Genome:
    """One proposed action per fleet sensor."""

    actions: tuple[tuple[str, str], ...]  # ((sensor_id, action), ...) sorted by id

    @classmethod
    def from_dict(cls, mapping: dict[str, str]) -> "Genome":
        for sensor_id, action in mapping.items():
            if action not in ACTIONS:
                raise ValidationError(f"unknown action {action!r} for {sensor_id}")
        return cls(tuple(sorted(mapping.items())))

    def as_dict(self) -> dict[str, str]:
        return dict(self.actions)

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.actions)


@dataclass(frozen=True)
class LabeledEpisode:
    system_string_before: str
    actions: tuple[tuple[str, str], ...]
    label: str                      # "good" | "bad"
    confirmed_alerts: int = 0
    energy_wh: float = 0.0

    def __post_init__(self):
        if self.label not in ("good", "bad"):
            raise ValidationError(f"label must be good or bad, got {self.label!r}")


@dataclass
class GaParams:
    pop_size: int = 32
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    elitism_count: int = 2

    def validate(self):
        if self.pop_size < 2:
            raise ValidationError("pop_size must be >= 2")
        if self.elitism_count < 1:
            raise ValidationError("elitism_count must be >= 1")
        if self.elitism_count > self.pop_size:
            raise ValidationError("elitism_count cannot exceed pop_size")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0,1]")


def state_similarity(a: str, b: str) -> float:
    """1 minus normalized Hamming distance over per-node role characters."""
    roles_a = {nid: role for nid, (role, _, _) in decode_system_string(a).items()}
    roles_b = {nid: role for nid, (role, _, _) in decode_system_string(b).items()}
    ids = set(roles_a) | set(roles_b)
    if not ids:
        return 1.0
    matches = sum(1 for nid in ids if roles_a.get(nid) == roles_b.get(nid))
    return matches / len(ids)


def action_match(genome: Genome, episode_actions: tuple[tuple[str, str], ...]) -> float:
    """Fraction of per-sensor actions the genome shares with an episode."""
    mine = genome.as_dict()
    theirs = dict(episode_actions)
    ids = set(mine) | set(theirs)
    if not ids:
        return 1.0
    return sum(1 for nid in ids if mine.get(nid) == theirs.get(nid)) / len(ids)


def fitness(genome: Genome, history: Iterable[LabeledEpisode], current: str) -> float:
    total = 0.0
    for episode in history:
        sign = 1.0 if episode.label == "good" else -1.0
        total += (state_similarity(current, episode.system_string_before)
                  * action_match(genome, episode.actions) * sign)
    return total


def random_genome(sensor_ids: Iterable[str], rng: random.Random) -> Genome:
    return Genome.from_dict({sid: rng.choice(ACTIONS) for sid in sensor_ids})


def seed_population(sensor_ids: Iterable[str], params: GaParams, rng_seed: int) -> list[Genome]:
    params.validate()
    rng = random.Random(rng_seed)
    ids = list(sensor_ids)
    return [random_genome(ids, rng) for _ in range(params.pop_size)]


def evolve(population: list[Genome], history: list[LabeledEpisode], current: str,
           params: GaParams, rng_seed: int) -> list[Genome]:
    """One generation: tournament selection (size 2), uniform crossover per
    sensor slot, per-slot mutation, elites copied unchanged."""
    params.validate()
    if not population:
        raise ValidationError("population is empty")
    rng = random.Random(rng_seed)
    scored = sorted(population, key=lambda g: (-fitness(g, history, current), g.actions))
    next_pop: list[Genome] = scored[:params.elitism_count]

    def tournament() -> Genome:
        a, b = rng.choice(population), rng.choice(population)
        fa, fb = fitness(a, history, current), fitness(b, history, current)
        if fa != fb:
            return a if fa > fb else b
        return min(a, b, key=lambda g: g.actions)

    while len(next_pop) < params.pop_size:
        p1, p2 = tournament(), tournament()
        child = dict(p1.actions)
        if rng.random() < params.crossover_rate:
            other = dict(p2.actions)
            for sid in child:
                if rng.random() < 0.5:
                    child[sid] = other.get(sid, child[sid])
        for sid in child:
            if rng.random() < params.mutation_rate:
                child[sid] = rng.choice(ACTIONS)
        next_pop.append(Genome.from_dict(child))
    return next_pop


def advise(current: str, population: list[Genome],
           history: list[LabeledEpisode]) -> list[tuple[dict[str, str], float]]:
    """Rank the population against the current fleet state, best first."""
    if not population:
        raise ValidationError("population is empty")
    ranked = sorted(population, key=lambda g: (-fitness(g, history, current), g.actions))
    return [(g.as_dict(), fitness(g, history, current)) for g in ranked]


# --- persistence ------------------------------------------------------------

def save_history(history: Iterable[LabeledEpisode], path: str | Path):
    with open(path, "w") as fh:
        for ep in history:
            fh.write(json.dumps({
                "before": ep.system_string_before,
                "actions": dict(ep.actions),
                "label": ep.label,
                "confirmed_alerts": ep.confirmed_alerts,
                "energy_wh": ep.energy_wh,
            }, sort_keys=True) + "\n")


def load_history(path: str | Path) -> list[LabeledEpisode]:
    episodes = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        episodes.append(LabeledEpisode(
            system_string_before=raw["before"],
            actions=tuple(sorted(raw["actions"].items())),
            label=raw["label"],
            confirmed_alerts=raw.get("confirmed_alerts", 0),
            energy_wh=raw.get("energy_wh", 0.0),
        ))
    return episodes


def save_population(population: Iterable[Genome], path: str | Path):
    with open(path, "w") as fh:
        for g in population:
            fh.write(",".join(f"{sid}={action}" for sid, action in g.actions) + "\n")


def load_population(path: str | Path) -> list[Genome]:
    population = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        mapping = dict(pair.split("=", 1) for pair in line.split(","))
        population.append(Genome.from_dict(mapping))
    return population
