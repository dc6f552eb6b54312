import pytest

from evoheur import (
    BuiltinBody,
    ConfigError,
    MockLlm,
    Origin,
    Population,
    fitness,
    generate_bpp_instances,
    initialize_population,
    run,
    step_generation,
    validate_config,
)
from evoheur.core import PENALTY_FITNESS
from evoheur.evolution import _Archive
from evoheur.runlog import RunLogger

from conftest import builtin_candidate, explore_block, mock_script_rules


@pytest.fixture
def instances():
    return generate_bpp_instances(120, 100, 2, seed=6)


def _weighted_markers(n):
    return [
        explore_block(f'# builtin: weighted_fit {{"residual_weight": {w}.0}}')
        for w in range(1, n + 1)
    ]


class TestInitializePopulation:
    def test_scripted_distinct_candidates(self, bpp_factory, instances):
        config = validate_config({"num_candidates_to_initialize": 10, "problem": "bpp"})
        rules = [{"match": "exactly one <explore> block", "response": blk}
                 for blk in _weighted_markers(10)]
        population = initialize_population(
            config, MockLlm.from_spec(rules), bpp_factory, instances
        )
        assert len(population.members) == 10
        assert all(c.origin is Origin.INIT for c, _ in population.members)
        ids = [c.id for c, _ in population.members]
        assert len(set(ids)) == 10

    def test_duplicates_deduped_then_padded(self, bpp_factory, instances):
        config = validate_config(
            {"num_candidates_to_initialize": 4, "top_k": 4, "problem": "bpp"}
        )
        rules = [{"match": "exactly one <explore> block",
                  "response": explore_block("# builtin: first_fit"),
                  "repeat": True}]
        population = initialize_population(
            config, MockLlm.from_spec(rules), bpp_factory, instances
        )
        assert len(population.members) == 4
        names = sorted(c.body.name for c, _ in population.members)
        assert names == ["best_fit", "first_fit", "weighted_fit", "worst_fit"]

    def test_invalid_scripts_fall_back_to_builtins(self, bpp_factory, instances):
        config = validate_config(
            {"num_candidates_to_initialize": 4, "top_k": 4, "problem": "bpp"}
        )
        population = initialize_population(
            config, MockLlm([], default_response="not a block"), bpp_factory, instances
        )
        assert len(population.members) == 4
        assert {c.body.name for c, _ in population.members} == {
            "first_fit", "best_fit", "worst_fit", "weighted_fit"
        }

    def test_guest_sources_without_runner_get_penalty(self, bpp_factory, instances):
        config = validate_config(
            {"num_candidates_to_initialize": 1, "top_k": 2, "problem": "bpp"}
        )
        rules = [{"match": "exactly one <explore> block",
                  "response": explore_block("def score(item, bins):\n    return bins")}]
        factory = type(bpp_factory)(problem="bpp", timeout=2,
                                    runner_cmd=["/nonexistent/runner"])
        population = initialize_population(
            config, MockLlm.from_spec(rules), factory, instances
        )
        assert population.members[0][1].fitness == PENALTY_FITNESS


class TestStepGeneration:
    def _population(self, names_params, factory, instances):
        members = []
        for name, params in names_params:
            cand = builtin_candidate(name, params)
            members.append((cand, fitness(cand, factory, instances)))
        return Population(members=members, generation=0)

    def _llm_noop(self):
        # decisions parse, candidate blocks never do
        return MockLlm([
            {"match": "Group candidates", "response": "{}", "repeat": True},
            {"match": "LOWER fitness", "response": "<exploit>", "repeat": True},
        ], default_response="junk")

    def _config(self, **overrides):
        base = {"max_turns": 1, "reminder_probability": 0.0, "top_k": 3,
                "num_clusters": 2, "num_elements": 2, "problem": "bpp",
                "num_candidates_to_initialize": 3}
        base.update(overrides)
        return validate_config(base)

    def test_failed_sessions_keep_population(self, bpp_factory, instances):
        population = self._population(
            [("first_fit", None), ("best_fit", None), ("worst_fit", None)],
            bpp_factory, instances,
        )
        config = self._config()
        new_pop, report = step_generation(
            population, config, MockLlm.from_spec([
                {"match": "Group candidates", "response": "{}", "repeat": True},
            ]), bpp_factory, instances, generation=1,
        )
        assert {c.id for c, _ in new_pop.members} == {c.id for c, _ in population.members}
        assert report.produced == []

    def test_elitism_keeps_incumbent_best(self, bpp_factory, instances):
        population = self._population(
            [("first_fit", None), ("best_fit", None), ("worst_fit", None)],
            bpp_factory, instances,
        )
        best_before = min(r.fitness for _, r in population.members)
        new_pop, report = step_generation(
            population, self._config(), self._llm_noop(), bpp_factory, instances,
            generation=1,
        )
        assert min(r.fitness for _, r in new_pop.members) <= best_before
        assert report.best_fitness <= best_before

    def test_better_session_candidate_selected(self, bpp_factory, instances):
        population = self._population(
            [("first_fit", None), ("worst_fit", None),
             ("weighted_fit", {"index_weight": 1.0})],
            bpp_factory, instances,
        )
        llm = MockLlm([
            {"match": "Group candidates", "response": "{}", "repeat": True},
            {"match": "LOWER fitness", "response": "<exploit>", "repeat": True},
            {"match": "exactly one <exploit> block",
             "response": explore_block("# builtin: best_fit").replace("explore", "exploit"),
             "repeat": True},
        ])
        new_pop, report = step_generation(
            population, self._config(), llm, bpp_factory, instances, generation=1,
        )
        names = {c.body.name for c, _ in new_pop.members}
        best_candidate = min(new_pop.members, key=lambda m: m[1].fitness)[0]
        assert "best_fit" in names
        assert best_candidate.generation_created in (0, 1)
        assert len(new_pop.members) == 3  # top_k

    def test_population_of_failures_degrades_gracefully(self, instances):
        # two penalty candidates: no ok fitness, grouping skipped, one session
        from evoheur import ExecutorFactory, GuestBody, make_candidate
        broken = ExecutorFactory(problem="bpp", timeout=2,
                                 runner_cmd=["/nonexistent/runner"])
        cands = [
            make_candidate(GuestBody("def score(item, bins):\n    return bins\n"), Origin.INIT),
            make_candidate(GuestBody("def score(item, bins):\n    return -bins\n"), Origin.INIT),
        ]
        members = [(c, fitness(c, broken, instances)) for c in cands]
        population = Population(members=members, generation=0)
        log = RunLogger(run_id="t", clock=lambda: 0.0)
        new_pop, report = step_generation(
            population, self._config(), self._llm_noop(), broken, instances,
            generation=1, log=log,
        )
        assert report.degraded_grouping
        partitions = [e for e in log.events if e["kind"] == "partition"]
        assert partitions and partitions[0]["provenance"] == "fallback"
        assert len(new_pop.members) == 2


class TestRun:
    def _config(self, **overrides):
        base = {
            "max_turns": 2, "num_candidates_to_initialize": 6, "epochs": 3,
            "top_k": 4, "reminder_probability": 1.0, "num_clusters": 2,
            "num_elements": 3, "problem": "bpp", "bpp_num_items": 200,
            "bpp_capacity": 100, "instance_count": 2, "instance_seed": 1,
            "seed": 99,
        }
        base.update(overrides)
        return validate_config(base)

    def test_exactly_epochs_generations(self):
        config = self._config()
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        assert len(result.reports) == 3
        assert [r.generation for r in result.reports] == [1, 2, 3]

    def test_best_so_far_non_increasing(self):
        config = self._config()
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        series = [r.best_fitness for r in result.reports]
        assert all(b <= a + 1e-15 for a, b in zip(series, series[1:]))

    def test_global_best_dominates_everything_logged(self):
        config = self._config()
        log = RunLogger(run_id="t", clock=lambda: 0.0)
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()), log=log)
        evaluated = [e["fitness"] for e in log.events if e["kind"] == "candidate_evaluated"]
        assert result.best_record.fitness <= min(evaluated) + 1e-15

    def test_lineage_traceable_to_init(self):
        config = self._config()
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        # walk the final population: every parent chain must end at init
        final = {c.id: c for c, _ in result.population.members}
        frontier = list(final.values())
        seen = set()
        while frontier:
            cand = frontier.pop()
            if cand.id in seen:
                continue
            seen.add(cand.id)
            if cand.origin is Origin.INIT:
                assert cand.parent_ids == ()
            else:
                assert cand.parent_ids
        # population ids distinct and within top_k
        assert len(final) <= config.top_k

    def test_identical_seeds_identical_reports(self):
        config = self._config()
        r1 = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        r2 = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        assert r1.reports == r2.reports
        assert r1.best_candidate == r2.best_candidate

    def test_epochs_zero_rejected(self):
        with pytest.raises(ConfigError):
            self._config(epochs=0)


class TestCheckpoint:
    def _config(self, **overrides):
        base = TestRun._config(TestRun(), **overrides)
        return base

    def test_round_trip_preserves_population(self, tmp_path):
        from evoheur import load_checkpoint, save_checkpoint
        config = self._config()
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        path = tmp_path / "snap.json"
        best = (result.best_candidate, result.best_record)
        save_checkpoint(str(path), result.population, 3, config, best)
        population, generation, loaded_best = load_checkpoint(str(path), config)
        assert generation == 3
        assert [c.id for c, _ in population.members] == [
            c.id for c, _ in result.population.members
        ]
        assert loaded_best[0].id == result.best_candidate.id
        assert loaded_best[1].fitness == result.best_record.fitness

    def test_resume_runs_only_remaining_generations(self, tmp_path):
        from evoheur.runlog import RunLogger
        config = self._config(epochs=2)
        path = tmp_path / "snap.json"
        run(config, llm=MockLlm.from_spec(mock_script_rules()),
            checkpoint_path=str(path))
        # same checkpoint, extended budget: only generations 3..4 execute
        extended = self._config(epochs=4)
        log = RunLogger(run_id="resume", clock=lambda: 0.0)
        result = run(extended, llm=MockLlm.from_spec(mock_script_rules()),
                     log=log, checkpoint_path=str(path))
        summaries = [e["generation"] for e in log.events
                     if e["kind"] == "generation_summary"]
        assert summaries == [3, 4]
        assert [r.generation for r in result.reports] == [3, 4]

    def test_seed_mismatch_rejected(self, tmp_path):
        from evoheur import load_checkpoint, save_checkpoint
        config = self._config()
        result = run(config, llm=MockLlm.from_spec(mock_script_rules()))
        path = tmp_path / "snap.json"
        save_checkpoint(str(path), result.population, 3, config,
                        (result.best_candidate, result.best_record))
        other = self._config(seed=100)
        with pytest.raises(ValueError, match="seed"):
            load_checkpoint(str(path), other)
