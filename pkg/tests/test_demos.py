"""Demonstration model tests: persistence, replay validation, splitting."""
from __future__ import annotations

import json

import numpy as np
import pytest

from onedemo.demos import (
    DemoRecorder,
    DemoSource,
    DemoTrajectory,
    DemoWaypoint,
    load_demo,
    replay_demo,
    save_demo,
    split_subtrajectories,
    validate_demo,
)
from onedemo.env import TabletopSim, TaskInstance, TaskKind, TaskSpec
from onedemo.errors import (
    DemoFormatError,
    RejectedDemoError,
    UnsplittableDemoError,
    ValidationError,
)
from onedemo.scripted import ScriptedExpert, record_scripted_demo


@pytest.fixture(scope="module")
def push_demo() -> DemoTrajectory:
    return record_scripted_demo(TaskKind.PUSH, seed=0)


@pytest.fixture(scope="module")
def stack_demo() -> DemoTrajectory:
    return record_scripted_demo(TaskKind.STACK, seed=0)


class TestRecordAndReplay:
    def test_scripted_demo_validates(self, push_demo):
        validate_demo(push_demo)  # does not raise
        assert push_demo.task is TaskKind.PUSH
        assert len(push_demo) == TaskSpec.for_kind(TaskKind.PUSH).episode_length

    def test_replay_reaches_goal(self, push_demo):
        success, states = replay_demo(push_demo)
        assert success
        final = states[-1]
        dist = np.linalg.norm(final.blocks[0].pos - push_demo.goals[0])
        assert dist < TaskSpec.for_kind(TaskKind.PUSH).success_threshold

    def test_closing_flag_matches_command_sign(self):
        spec = TaskSpec.for_kind(TaskKind.PUSH)
        inst = TaskInstance(np.array([[0.05, 0.0, 0.02]]), np.array([[0.1, 0.1, 0.02]]))
        sim = TabletopSim(spec)
        sim.reset(instance=inst)
        rec = DemoRecorder(spec, inst)
        for d_grip in (-0.5, 0.0, 1.0):
            a = [0.1, 0.0, 0.0, d_grip]
            state, _, _, _ = sim.step(a)
            rec.record_step(state, a)
        demo = rec.finish(DemoSource.HUMAN_TELEOP)
        assert [wp.gripper_closing for wp in demo.waypoints] == [True, False, False]

    def test_recorder_finish_twice_errors(self):
        spec = TaskSpec.for_kind(TaskKind.PUSH)
        inst = TaskInstance(np.array([[0.05, 0.0, 0.02]]), np.array([[0.1, 0.1, 0.02]]))
        rec = DemoRecorder(spec, inst)
        sim = TabletopSim(spec)
        sim.reset(instance=inst)
        state, _, _, _ = sim.step([0, 0, 0, 0])
        rec.record_step(state, [0, 0, 0, 0])
        rec.record_step(state, [0, 0, 0, 0])
        rec.finish(DemoSource.HUMAN_TELEOP)
        with pytest.raises(ValidationError):
            rec.record_step(state, [0, 0, 0, 0])


class TestPersistence:
    def test_round_trip_is_exact(self, tmp_path, push_demo):
        p = save_demo(push_demo, tmp_path / "demo.json")
        back = load_demo(p)
        assert back.task is push_demo.task
        assert back.source is push_demo.source
        np.testing.assert_array_equal(back.block_starts, push_demo.block_starts)
        np.testing.assert_array_equal(back.goals, push_demo.goals)
        assert len(back) == len(push_demo)
        for a, b in zip(back.waypoints, push_demo.waypoints):
            assert a.step_index == b.step_index
            np.testing.assert_array_equal(a.ee_pos, b.ee_pos)
            assert a.gripper_width == b.gripper_width
            assert a.gripper_closing == b.gripper_closing

    def test_save_rejects_unsuccessful(self, tmp_path, push_demo):
        bad = DemoTrajectory(
            task=push_demo.task,
            waypoints=push_demo.waypoints[:5],  # truncated: never reaches the goal
            block_starts=push_demo.block_starts,
            goals=push_demo.goals,
            source=push_demo.source,
        )
        with pytest.raises(RejectedDemoError):
            save_demo(bad, tmp_path / "bad.json")
        assert not (tmp_path / "bad.json").exists()

    def test_schema_field_names(self, tmp_path, push_demo):
        p = save_demo(push_demo, tmp_path / "demo.json")
        doc = json.loads(p.read_text())
        assert set(doc) == {
            "format_version", "task", "source", "block_starts", "goals",
            "waypoints", "metadata",
        }
        assert doc["format_version"] == 1
        assert doc["task"] == "push"
        assert doc["source"] == "scripted_expert"
        assert set(doc["waypoints"][0]) == {"i", "ee", "w", "closing"}

    def test_save_deterministic_bytes(self, tmp_path, push_demo):
        p1 = save_demo(push_demo, tmp_path / "a.json")
        p2 = save_demo(push_demo, tmp_path / "b.json")
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_file_errors_name_the_field(self, tmp_path, push_demo):
        p = save_demo(push_demo, tmp_path / "demo.json")
        doc = json.loads(p.read_text())

        del doc["goals"]
        q = tmp_path / "missing.json"
        q.write_text(json.dumps(doc))
        with pytest.raises(DemoFormatError, match="goals"):
            load_demo(q)

        doc = json.loads(p.read_text())
        doc["waypoints"][3]["ee"] = [0.0, 0.1]
        q.write_text(json.dumps(doc))
        with pytest.raises(DemoFormatError, match=r"waypoints\[3\]"):
            load_demo(q)

        q.write_text("{ not json")
        with pytest.raises(DemoFormatError, match="line 1"):
            load_demo(q)

        doc = json.loads(p.read_text())
        doc["task"] = "juggle"
        q.write_text(json.dumps(doc))
        with pytest.raises(DemoFormatError, match="juggle"):
            load_demo(q)


class TestSplitting:
    def test_single_block_tasks_are_one_segment(self, push_demo):
        segs = split_subtrajectories(push_demo)
        assert len(segs) == 1
        assert segs[0].lo == 0 and segs[0].hi == len(push_demo) - 1
        assert segs[0].block_index == 0
        np.testing.assert_array_equal(segs[0].start, push_demo.block_starts[0])
        np.testing.assert_array_equal(segs[0].goal, push_demo.goals[0])

    def test_stack_demo_splits_at_first_release(self, stack_demo):
        segs = split_subtrajectories(stack_demo)
        assert len(segs) == 2
        a, b = segs
        assert a.lo == 0 and b.hi == len(stack_demo) - 1
        assert b.lo == a.hi + 1  # segments partition the waypoints in order
        assert (a.block_index, b.block_index) == (0, 1)
        # the release itself belongs to the first segment: replaying up to the
        # boundary leaves block 0 placed and nothing grasped
        _, states = replay_demo(stack_demo)
        at_split = states[a.hi]
        assert at_split.grasped_block is None
        spec = TaskSpec.for_kind(TaskKind.STACK)
        assert np.linalg.norm(at_split.blocks[0].pos - stack_demo.goals[0]) < spec.success_threshold

    def test_segment_goals_are_per_block(self, stack_demo):
        a, b = split_subtrajectories(stack_demo)
        np.testing.assert_array_equal(a.goal, stack_demo.goals[0])
        np.testing.assert_array_equal(b.goal, stack_demo.goals[1])
        np.testing.assert_array_equal(b.start, stack_demo.block_starts[1])

    def test_stack_without_release_is_unsplittable(self, stack_demo):
        # keep only the waypoints before the first release
        segs = split_subtrajectories(stack_demo)
        cut = segs[0].hi - 3
        truncated = DemoTrajectory(
            task=stack_demo.task,
            waypoints=stack_demo.waypoints[:cut],
            block_starts=stack_demo.block_starts,
            goals=stack_demo.goals,
            source=stack_demo.source,
        )
        with pytest.raises(UnsplittableDemoError):
            split_subtrajectories(truncated)


class TestScriptedExperts:
    @pytest.mark.parametrize("kind", [TaskKind.PUSH, TaskKind.PICK_AND_PLACE, TaskKind.STACK])
    def test_all_tasks_solve(self, kind):
        demo = record_scripted_demo(kind, seed=1)
        success, _ = replay_demo(demo)
        assert success

    def test_same_seed_same_demo(self):
        a = record_scripted_demo(TaskKind.PUSH, seed=3)
        b = record_scripted_demo(TaskKind.PUSH, seed=3)
        np.testing.assert_array_equal(a.block_starts, b.block_starts)
        for wa, wb in zip(a.waypoints, b.waypoints):
            np.testing.assert_array_equal(wa.ee_pos, wb.ee_pos)
            assert wa.gripper_width == wb.gripper_width

    def test_pick_and_place_demo_has_air_goal(self):
        demo = record_scripted_demo(TaskKind.PICK_AND_PLACE, seed=2)
        assert demo.goals[0, 2] >= 0.12

    def test_expert_is_deterministic_policy(self):
        spec = TaskSpec.for_kind(TaskKind.PUSH)
        inst = TaskInstance(np.array([[0.08, -0.1, 0.02]]), np.array([[-0.1, 0.09, 0.02]]))
        outs = []
        for _ in range(2):
            sim = TabletopSim(spec)
            sim.reset(instance=inst)
            expert = ScriptedExpert(spec, inst)
            acts = []
            for _ in range(spec.episode_length):
                a = expert.action(sim.state)
                acts.append(a)
                sim.step(a)
            outs.append(np.array(acts))
        np.testing.assert_array_equal(outs[0], outs[1])
