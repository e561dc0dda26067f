import numpy as np
import pytest

from silc.agent import (
    DecoderConfig,
    DecoderStore,
    PolicyConfig,
    act,
    assign_labels,
    decode,
    train_policy,
    update_decoder,
)
from silc.clustering import AnnotatedTransition
from silc.errors import ContractViolation, DecoderMiss
from silc.spaces import SkillInfo, SkillRegistry


def tr(state, action, subgoal, ep=0, step=0):
    return AnnotatedTransition(
        state=np.asarray(state, float),
        action=np.asarray(action, float),
        subgoal=np.asarray(subgoal, float),
        episode_id=ep,
        step=step,
    )


def registry_with_embeddings(embeddings, phases=None):
    dim = len(embeddings[0])
    reg = SkillRegistry(dimension=dim)
    phases = phases or [1] * len(embeddings)
    for z, (emb, p) in enumerate(zip(embeddings, phases)):
        reg.skills.append(SkillInfo(index=z, phase_introduced=p, subgoal_embedding=np.asarray(emb, float)))
    return reg


class TestDecode:
    def test_exact_match_returns_stored_action(self):
        reg = registry_with_embeddings([[1.0, 1.0]])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.5, 0.5], [0.25, -0.5], [1.0, 1.0])], store, phase=1)
        out = decode([0.5, 0.5], 0, reg, store)
        assert np.allclose(out, [0.25, -0.5])

    def test_goal_term_breaks_state_ties(self):
        reg = registry_with_embeddings([[0.0, 0.0]])
        store = DecoderStore(strategy="AA")
        update_decoder(
            [
                tr([0.0, 0.0], [1.0, 0.0], [5.0, 5.0]),  # same state, far goal
                tr([0.0, 0.0], [0.0, 1.0], [0.0, 0.0]),  # same state, matching goal
            ],
            store,
            phase=1,
        )
        assert np.allclose(decode([0.0, 0.0], 0, reg, store), [0.0, 1.0])

    def test_tie_prefers_earliest_stored(self):
        reg = registry_with_embeddings([[0.0, 0.0]])
        store = DecoderStore(strategy="AA")
        update_decoder(
            [
                tr([0.0, 0.0], [1.0, 0.0], [0.0, 0.0]),
                tr([0.0, 0.0], [2.0, 0.0], [0.0, 0.0]),
            ],
            store,
            phase=1,
        )
        assert np.allclose(decode([0.0, 0.0], 0, reg, store), [1.0, 0.0])

    def test_ft_retrieves_from_latest_phase_only(self):
        # Disjoint supports: phase 1 lives near the origin, phase 2 far away.
        reg = registry_with_embeddings([[0.0, 0.0], [10.0, 10.0]], phases=[1, 2])
        store = DecoderStore(strategy="FT")
        update_decoder([tr([0.0, 0.0], [1.0, 1.0], [0.0, 0.0])], store, phase=1)
        update_decoder([tr([10.0, 10.0], [-1.0, -1.0], [10.0, 10.0])], store, phase=2)
        out = decode([0.0, 0.0], 0, reg, store)  # skill 0 introduced in phase 1
        assert np.allclose(out, [-1.0, -1.0])  # forgetting analog: phase-2 data answered

    def test_aa_scopes_to_introducing_phase(self):
        reg = registry_with_embeddings([[0.0, 0.0], [10.0, 10.0]], phases=[1, 2])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.0, 0.0], [1.0, 1.0], [0.0, 0.0])], store, phase=1)
        update_decoder([tr([0.0, 0.0], [-1.0, -1.0], [10.0, 10.0])], store, phase=2)
        assert np.allclose(decode([0.0, 0.0], 0, reg, store), [1.0, 1.0])
        assert np.allclose(decode([0.0, 0.0], 1, reg, store), [-1.0, -1.0])

    def test_empty_scope_raises_miss(self):
        reg = registry_with_embeddings([[0.0, 0.0]], phases=[3])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.0, 0.0], [1.0, 1.0], [0.0, 0.0])], store, phase=1)
        with pytest.raises(DecoderMiss):
            decode([0.0, 0.0], 0, reg, store)

    def test_unknown_skill(self):
        reg = registry_with_embeddings([[0.0, 0.0]])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.0, 0.0], [1.0, 1.0], [0.0, 0.0])], store, phase=1)
        with pytest.raises(ContractViolation):
            decode([0.0, 0.0], 5, reg, store)


class TestUpdateDecoder:
    def test_aa_keeps_all_partitions(self):
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0, 0], [0, 0], [0, 0]) for _ in range(10)], store, phase=1)
        update_decoder([tr([1, 1], [0, 0], [1, 1]) for _ in range(8)], store, phase=2)
        assert len(store.partitions[1]) == 10
        assert len(store.partitions[2]) == 8

    def test_er_retains_fraction(self):
        store = DecoderStore(strategy="ER", er_ratio=0.1)
        update_decoder([tr([i, 0], [0, 0], [i, 0]) for i in range(30)], store, phase=1)
        update_decoder([tr([0, i], [0, 0], [0, i]) for i in range(10)], store, phase=2)
        assert len(store.partitions[1]) == 3  # ceil(0.1 * 30)
        assert len(store.partitions[2]) == 10
        update_decoder([tr([5, 5], [0, 0], [5, 5]) for _ in range(4)], store, phase=3)
        assert len(store.partitions[1]) == 3
        assert len(store.partitions[2]) == 1

    def test_er_subsample_is_deterministic_and_ordered(self):
        stores = []
        for _ in range(2):
            store = DecoderStore(strategy="ER", er_ratio=0.3, seed=5)
            update_decoder([tr([i, 0], [i, 0], [i, 0]) for i in range(20)], store, phase=1, seed=5)
            update_decoder([tr([0, 0], [0, 0], [0, 0])], store, phase=2, seed=6)
            stores.append(store)
        kept_a = [t.state[0] for t in stores[0].partitions[1]]
        kept_b = [t.state[0] for t in stores[1].partitions[1]]
        assert kept_a == kept_b
        assert kept_a == sorted(kept_a)

    def test_ft_empties_prior(self):
        store = DecoderStore(strategy="FT")
        update_decoder([tr([0, 0], [0, 0], [0, 0]) for _ in range(5)], store, phase=1)
        update_decoder([tr([1, 1], [0, 0], [1, 1]) for _ in range(5)], store, phase=2)
        assert store.partitions[1] == []
        assert len(store.partitions[2]) == 5

    def test_aa_snapshot_frozen_under_later_updates(self):
        # Decode for an old skill never changes after its phase (AA contract).
        reg = registry_with_embeddings([[0.0, 0.0]], phases=[1])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.1, 0.1], [0.7, 0.2], [0.0, 0.0])], store, phase=1)
        before = decode([0.0, 0.0], 0, reg, store)
        update_decoder([tr([0.0, 0.0], [-0.9, -0.9], [0.0, 0.0])], store, phase=2)
        after = decode([0.0, 0.0], 0, reg, store)
        assert np.array_equal(before, after)


class TestAssignLabels:
    def test_matches_per_call_decode(self):
        rng = np.random.default_rng(0)
        reg = registry_with_embeddings(rng.normal(size=(4, 2)), phases=[1, 1, 2, 2])
        store = DecoderStore(strategy="AA")
        update_decoder([tr(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(15)], store, phase=1)
        update_decoder([tr(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(12)], store, phase=2)
        demos = [tr(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(25)]
        got = assign_labels(demos, reg, store, [0, 1, 2, 3])
        for t, (state, z) in zip(demos, got):
            errs = []
            for cand in [0, 1, 2, 3]:
                a_hat = decode(t.state, cand, reg, store)
                errs.append(float(np.sum((a_hat - t.action) ** 2)))
            assert z == int(np.argmin(errs))
            assert np.array_equal(state, t.state)

    def test_perfect_skill_wins(self):
        reg = registry_with_embeddings([[0.0, 0.0], [9.0, 9.0]])
        store = DecoderStore(strategy="AA")
        update_decoder(
            [
                tr([0.0, 0.0], [1.0, 0.0], [0.0, 0.0]),
                tr([9.0, 9.0], [0.0, 1.0], [9.0, 9.0]),
            ],
            store,
            phase=1,
        )
        demos = [tr([0.0, 0.0], [1.0, 0.0], [0.0, 0.0])]
        assert assign_labels(demos, reg, store, [0, 1])[0][1] == 0

    def test_tie_takes_lowest_index(self):
        reg = registry_with_embeddings([[0.0, 0.0], [0.0, 0.0]])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0.0, 0.0], [1.0, 0.0], [0.0, 0.0])], store, phase=1)
        demos = [tr([0.0, 0.0], [1.0, 0.0], [0.0, 0.0])]
        assert assign_labels(demos, reg, store, [1, 0])[0][1] == 0

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        reg = registry_with_embeddings(rng.normal(size=(3, 2)))
        store = DecoderStore(strategy="AA")
        update_decoder([tr(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(10)], store, phase=1)
        demos = [tr(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)) for _ in range(8)]
        a = assign_labels(demos, reg, store, [0, 1, 2])
        b = assign_labels(list(reversed(demos)), reg, store, [0, 1, 2])
        assert [z for _, z in a] == [z for _, z in reversed(b)]

    def test_empty_demos(self):
        reg = registry_with_embeddings([[0.0, 0.0]])
        store = DecoderStore(strategy="AA")
        update_decoder([tr([0, 0], [0, 0], [0, 0])], store, phase=1)
        with pytest.raises(ContractViolation):
            assign_labels([], reg, store, [0])


class TestPolicy:
    def test_single_label_always_returned(self):
        policy = train_policy([(np.array([0.0, 0.0]), 3), (np.array([1.0, 1.0]), 3)], PolicyConfig(seed=0))
        assert act(policy, [5.0, 5.0]) == 3

    def test_separated_clouds_perfect_heldin(self):
        rng = np.random.default_rng(2)
        labeled = [(rng.normal(0, 0.2, 2), 0) for _ in range(30)]
        labeled += [(rng.normal(8, 0.2, 2), 1) for _ in range(30)]
        policy = train_policy(labeled, PolicyConfig(sub_clusters=4, seed=0))
        assert all(act(policy, s) == z for s, z in labeled)

    def test_matches_bruteforce_nearest_cloud(self):
        rng = np.random.default_rng(3)
        labeled = [(rng.normal(0, 1.0, 2), int(z)) for z in rng.integers(0, 3, 60)]
        policy = train_policy(labeled, PolicyConfig(sub_clusters=2, seed=1))
        mem = policy.classifier
        for _ in range(40):
            s = rng.normal(0, 1.5, 2)
            dists = {z: mem.label_distance(s, z) for z in mem.labels}
            best = min(sorted(dists), key=lambda z: dists[z])
            assert act(policy, s) == best

    def test_sub_cluster_cap(self):
        labeled = [(np.array([float(i), 0.0]), 0) for i in range(3)]
        policy = train_policy(labeled, PolicyConfig(sub_clusters=4, seed=0))
        assert len(policy.classifier.entries[0].components) == 3

    def test_labels_property(self):
        policy = train_policy([(np.zeros(2), 2), (np.ones(2), 0)], PolicyConfig(seed=0))
        assert policy.labels == [0, 2]
