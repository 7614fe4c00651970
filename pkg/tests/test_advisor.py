import pytest

from green_nsm.advisor import (
    GaParams,
    Genome,
    LabeledEpisode,
    advise,
    evolve,
    fitness,
    load_history,
    load_population,
    save_history,
    save_population,
    seed_population,
    state_similarity,
)
from green_nsm.types import SensorRole, ValidationError, encode_system_string

FLEET = ["s1", "s2", "s3"]
CURRENT = encode_system_string({sid: (SensorRole.HALF_CYCLE, 0.5, 0.5) for sid in FLEET})


def genome(**actions):
    base = {sid: "hold" for sid in FLEET}
    base.update(actions)
    return Genome.from_dict(base)


def episode(actions, label="good", before=CURRENT):
    return LabeledEpisode(system_string_before=before,
                          actions=tuple(sorted(actions.items())), label=label)


class TestFitness:
    def test_empty_history_zero(self):
        assert fitness(genome(), [], CURRENT) == 0.0

    def test_identical_good_episode_is_one(self):
        g = genome(s1="escalate")
        assert fitness(g, [episode(g.as_dict())], CURRENT) == 1.0

    def test_two_of_three_agreement(self):
        g = genome(s1="escalate", s2="power_save", s3="hold")
        ep = episode({"s1": "escalate", "s2": "power_save", "s3": "escalate"})
        assert fitness(g, [ep], CURRENT) == pytest.approx(2 / 3)

    def test_bad_label_negates(self):
        g = genome()
        assert fitness(g, [episode(g.as_dict(), label="bad")], CURRENT) == -1.0

    def test_direct_summation_oracle(self):
        g = genome(s1="escalate")
        history = [
            episode({"s1": "escalate", "s2": "hold", "s3": "hold"}, "good"),
            episode({"s1": "power_save", "s2": "hold", "s3": "hold"}, "bad"),
        ]
        expected = sum(
            state_similarity(CURRENT, ep.system_string_before)
            * (sum(1 for sid in FLEET if dict(ep.actions)[sid] == g.as_dict()[sid]) / 3)
            * (1 if ep.label == "good" else -1)
            for ep in history
        )
        assert fitness(g, history, CURRENT) == pytest.approx(expected)

    def test_state_similarity_is_role_hamming(self):
        other = encode_system_string({
            "s1": (SensorRole.FULL_CYCLE, 0.5, 0.5),
            "s2": (SensorRole.HALF_CYCLE, 0.5, 0.5),
            "s3": (SensorRole.HALF_CYCLE, 0.5, 0.5),
        })
        assert state_similarity(CURRENT, other) == pytest.approx(2 / 3)
        assert state_similarity(CURRENT, CURRENT) == 1.0


class TestEvolve:
    def test_degenerate_params_identity(self):
        params = GaParams(pop_size=4, crossover_rate=0.0, mutation_rate=0.0,
                          elitism_count=4)
        pop = seed_population(FLEET, params, 7)
        nxt = evolve(pop, [], CURRENT, params, 7)
        assert sorted(g.actions for g in nxt) == sorted(g.actions for g in pop)

    def test_same_seed_identical(self):
        params = GaParams(pop_size=8)
        pop = seed_population(FLEET, params, 3)
        history = [episode({"s1": "escalate", "s2": "hold", "s3": "hold"})]
        a = evolve(pop, history, CURRENT, params, 11)
        b = evolve(pop, history, CURRENT, params, 11)
        assert a == b

    def test_invalid_params_rejected(self):
        with pytest.raises(ValidationError):
            GaParams(pop_size=1).validate()
        with pytest.raises(ValidationError):
            GaParams(elitism_count=0).validate()
        with pytest.raises(ValidationError):
            GaParams(mutation_rate=1.5).validate()

    @pytest.mark.parametrize("seed", range(5))
    def test_best_fitness_non_decreasing(self, seed):
        params = GaParams(pop_size=16, mutation_rate=0.1, elitism_count=2)
        history = [episode({"s1": "escalate", "s2": "power_save", "s3": "hold"})]
        pop = seed_population(FLEET, params, seed)
        best = max(fitness(g, history, CURRENT) for g in pop)
        trace = [best]
        for gen in range(50):
            pop = evolve(pop, history, CURRENT, params, seed * 1000 + gen)
            best_now = max(fitness(g, history, CURRENT) for g in pop)
            trace.append(best_now)
        assert all(b >= a for a, b in zip(trace, trace[1:]))

    def test_genome_closure(self):
        params = GaParams(pop_size=8, mutation_rate=0.5)
        pop = seed_population(FLEET, params, 1)
        nxt = evolve(pop, [], CURRENT, params, 2)
        for g in nxt:
            assert g.sensor_ids == tuple(sorted(FLEET))


class TestAdvise:
    def test_population_of_one(self):
        g = genome(s1="escalate")
        ranked = advise(CURRENT, [g], [])
        assert ranked == [(g.as_dict(), 0.0)]

    def test_matching_genome_ranks_first(self):
        good = genome(s1="escalate")
        other = genome(s1="power_save", s2="power_save", s3="power_save")
        history = [episode(good.as_dict())]
        ranked = advise(CURRENT, [other, good], history)
        assert ranked[0][0] == good.as_dict()
        assert ranked[0][1] > ranked[1][1]

    def test_actions_only_for_known_sensors(self):
        params = GaParams(pop_size=6)
        pop = seed_population(FLEET, params, 5)
        for actions, _ in advise(CURRENT, pop, []):
            assert set(actions) == set(FLEET)

    def test_unknown_action_rejected(self):
        with pytest.raises(ValidationError):
            Genome.from_dict({"s1": "reboot"})


class TestPersistence:
    def test_history_round_trip(self, tmp_path):
        history = [episode({"s1": "escalate", "s2": "hold", "s3": "hold"}),
                   episode({"s1": "hold", "s2": "hold", "s3": "hold"}, "bad")]
        p = tmp_path / "episodes.ndjson"
        save_history(history, p)
        assert load_history(p) == history

    def test_population_round_trip(self, tmp_path):
        pop = seed_population(FLEET, GaParams(pop_size=4), 9)
        p = tmp_path / "population.txt"
        save_population(pop, p)
        assert load_population(p) == pop

    def test_bad_label_rejected(self):
        with pytest.raises(ValidationError):
            LabeledEpisode(CURRENT, (), "meh")
