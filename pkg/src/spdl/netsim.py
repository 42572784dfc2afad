"""Deterministic synchronous scheduler, adversary library and node runtime.

A round runs three stages in order: local gradient computation (sample,
gradient, clip, noise), all-to-all gradient exchange (a silent node's
peers substitute the zero vector), then consensus / plain aggregation.
Time is integer ticks for logic; wall-clock per stage is recorded
separately for latency reporting only.

Determinism: every source of randomness is a counter-based Philox stream
keyed by (experiment seed, node index, purpose), message delivery within
a stage is sorted by (sender id, message hash), and nodes are always
iterated in index order.  Identical configs therefore produce bitwise
identical metric streams and chains on one platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import consensus as cns
from . import gar
from .crypto import KeyPair, KeyRegistry, keygen, vrf_eval
from .election import elect_leader, election_seed, verify_candidates
from .encoding import enc_u64
from .errors import ConfigurationError, ElectionFailedError, SimulationError
from .learning import Batch, Dataset, LossSpec, SOFTMAX, compute_gradient, compute_loss, init_model, sample_batch, test_error
from .ledger import Chain, Transaction, make_block, make_genesis
from .privacy import DpConfig, _standard_normal, clip_gradient, perturb

# Purpose codes for per-node random streams.
PURPOSE_BATCH = 0
PURPOSE_NOISE = 1
PURPOSE_ADVERSARY = 2
# World-level streams live in a reserved node slot.
WORLD_SLOT = 2**32 - 1
PURPOSE_BYZSET = 0
PURPOSE_PICKER = 1

TICK_LGC = 1
TICK_GE = 1
TICK_MSG = 1

SCHEME_PURE = "pure"
SCHEME_DP = "dp"
SCHEME_SPDL = "spdl"
SCHEMES = (SCHEME_PURE, SCHEME_DP, SCHEME_SPDL)

UPDATE_GAR = "gar"
UPDATE_SINGLE_RANDOM = "single-random"

STRAT_SILENT = "silent"
STRAT_RANDOM_GAUSSIAN = "random-gaussian"
STRAT_SIGN_FLIP = "sign-flip"
STRAT_CONSTANT = "constant"
STRAT_EQUIVOCATE = "equivocate-consensus"
STRAT_DELTA_SUB = "delta-substitution"
STRATEGIES = (
    STRAT_SILENT, STRAT_RANDOM_GAUSSIAN, STRAT_SIGN_FLIP,
    STRAT_CONSTANT, STRAT_EQUIVOCATE, STRAT_DELTA_SUB,
)
# Strategies that leave the consensus role honest (corruption is gradient-level
# except delta-substitution, which only corrupts the node's own proposals).
CONSENSUS_HONEST = (
    STRAT_RANDOM_GAUSSIAN, STRAT_SIGN_FLIP, STRAT_CONSTANT, STRAT_DELTA_SUB,
)


def node_rng(seed: int, node_index: int, purpose: int) -> np.random.Generator:
    """Independent counter-based stream for one node and purpose."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(node_index, purpose))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class AdversaryScript:
    """Per-node misbehaviour: a default strategy plus per-round overrides."""

    strategy: str = STRAT_SIGN_FLIP
    scale: float = 10.0
    constant: tuple[float, ...] | None = None
    overrides: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for strat in (self.strategy, *self.overrides.values()):
            if strat not in STRATEGIES:
                raise ConfigurationError(f"unknown adversary strategy: {strat!r}")
        if self.strategy == STRAT_CONSTANT and self.constant is None:
            raise ConfigurationError("constant strategy needs a vector")

    def strategy_for(self, round_no: int) -> str:
        return self.overrides.get(round_no, self.strategy)

    @staticmethod
    def randomized(strategies: Sequence[str], rounds: int, rng: np.random.Generator) -> "AdversaryScript":
        """Script choosing uniformly among the given strategies each round."""
        choices = {t: strategies[int(rng.integers(len(strategies)))] for t in range(rounds)}
        return AdversaryScript(strategy=strategies[0], overrides=choices)


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int
    rounds: int
    gamma: float
    batch_size: int
    gar_kind: str = gar.KRUM
    scheme: str = SCHEME_SPDL
    update_rule: str = UPDATE_GAR
    byz_ratio: float = 0.0
    byz_script: AdversaryScript = field(default_factory=AdversaryScript)
    byz_nodes: tuple[int, ...] | None = None
    dp: DpConfig | None = None
    delta1: int = 5
    delta2: int = 10
    delta_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme: {self.scheme!r}")
        if self.update_rule not in (UPDATE_GAR, UPDATE_SINGLE_RANDOM):
            raise ConfigurationError(f"unknown update rule: {self.update_rule!r}")
        if self.scheme == SCHEME_SPDL:
            if self.n_nodes < 4:
                raise ConfigurationError("spdl scheme needs at least 4 nodes")
            if self.update_rule != UPDATE_GAR:
                raise ConfigurationError("spdl always updates through the GAR")
        elif self.n_nodes < 1:
            raise ConfigurationError("need at least one node")
        if self.scheme == SCHEME_PURE and self.dp is not None and self.dp.sigma != 0.0:
            raise ConfigurationError("pure scheme forces sigma to zero")
        if self.scheme == SCHEME_DP and self.dp is None:
            raise ConfigurationError("dp scheme needs a DP config")
        if self.update_rule == UPDATE_SINGLE_RANDOM and self.byz_ratio != 0.0:
            raise ConfigurationError("the single-gradient reference run is Byzantine-free")
        if not 0.0 <= self.byz_ratio < 1.0:
            raise ConfigurationError("byz_ratio must lie in [0, 1)")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if self.delta2 < self.delta1 + 4:
            raise ConfigurationError("delta2 must exceed delta1 plus the phase budget")
        if self.gar_kind not in gar.GAR_KINDS:
            raise ConfigurationError(f"unknown GAR kind: {self.gar_kind!r}")

    @property
    def f(self) -> int:
        """Declared Byzantine capacity; Krum and quorums are sized with this."""
        return (self.n_nodes - 1) // 3

    @property
    def byz_count(self) -> int:
        if self.byz_nodes is not None:
            return len(self.byz_nodes)
        return int(round(self.byz_ratio * self.n_nodes))


@dataclass
class RoundMetrics:
    epoch: int
    round_no: int
    leader: bytes | None
    committed: bool
    block_hash: bytes | None
    test_error: float | None
    reputation_min: float | None
    t_lgc_ticks: int
    t_ge_ticks: int
    t_bc_ticks: int
    t_lgc_ms: float
    t_ge_ms: float
    t_bc_ms: float
    wall_ms: float


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    losses: list[float]
    final_model: np.ndarray
    chain: Chain | None
    reputations: dict[bytes, float] | None
    byz_indices: tuple[int, ...]
    trace: list[str]


class _Node:
    def __init__(self, index: int, keypair: KeyPair, node_id: bytes, data: Dataset,
                 model: np.ndarray, chain: Chain, reputations: cns.ReputationTable,
                 seed: int, script: AdversaryScript | None):
        self.index = index
        self.keypair = keypair
        self.node_id = node_id
        self.data = data
        self.model = model
        self.chain = chain
        self.reputations = reputations
        self.script = script
        self.batch_rng = node_rng(seed, index, PURPOSE_BATCH)
        self.noise_rng = node_rng(seed, index, PURPOSE_NOISE)
        self.adv_rng = node_rng(seed, index, PURPOSE_ADVERSARY)
        self.state: cns.RoundState | None = None

    @property
    def is_byzantine(self) -> bool:
        return self.script is not None


class World:
    """Owns the nodes, the message bus and the synchronous round loop."""

    def __init__(self, cfg: SimConfig, train_parts: Sequence[Dataset],
                 testset: Dataset | None, loss_spec: LossSpec,
                 collect_trace: bool = False):
        if len(train_parts) != cfg.n_nodes:
            raise ConfigurationError(
                f"{cfg.n_nodes} nodes but {len(train_parts)} dataset partitions"
            )
        n_features = train_parts[0].n_features
        if any(p.n_features != n_features for p in train_parts):
            raise ConfigurationError("all partitions must share the feature layout")
        self.cfg = cfg
        self.loss_spec = loss_spec
        self.testset = testset
        self.dim = loss_spec.dim(n_features)
        self.registry = KeyRegistry()
        self.tick = 0
        self.epoch = 0
        self.attempt = 0
        self.round_no = 0
        self.leader_id: bytes | None = None
        self.pending_txs: list[Transaction] = []
        self.last_gradients: list[np.ndarray] | None = None
        self.last_election_rejected = 0
        self.trace: list[str] = []
        self._collect_trace = collect_trace
        self._stage = "idle"

        byz_indices = cfg.byz_nodes
        if byz_indices is None:
            picker = node_rng(cfg.seed, WORLD_SLOT, PURPOSE_BYZSET)
            chosen = picker.choice(cfg.n_nodes, size=cfg.byz_count, replace=False)
            byz_indices = tuple(sorted(int(i) for i in chosen))
        else:
            byz_indices = tuple(sorted(byz_indices))
            if any(not 0 <= i < cfg.n_nodes for i in byz_indices):
                raise ConfigurationError("byz_nodes out of range")
        self.byz_indices = byz_indices
        self._picker_rng = node_rng(cfg.seed, WORLD_SLOT, PURPOSE_PICKER)

        # Bootstrap: keys, unique ids, registration txs, genesis, zeroed model.
        pairs = [keygen(b"node" + enc_u64(cfg.seed % 2**64) + enc_u64(i))
                 for i in range(cfg.n_nodes)]
        ids = [node_id for _, node_id in pairs]
        if len(set(ids)) != len(ids):
            raise SimulationError("node id collision at bootstrap")
        txs = [
            Transaction(kind="register", pk=pair.pk, node_id=node_id,
                        address=f"node-{i}", timestamp=0)
            for i, (pair, node_id) in enumerate(pairs)
        ]
        genesis = make_genesis(txs, dimension=self.dim)
        chain = Chain(blocks=(genesis,))
        reputations = cns.ReputationTable.initial(ids)
        model0 = init_model(loss_spec, n_features)

        self.nodes: list[_Node] = []
        for i, (pair, node_id) in enumerate(pairs):
            self.registry.register(pair)
            script = cfg.byz_script if i in byz_indices else None
            self.nodes.append(_Node(
                index=i, keypair=pair, node_id=node_id, data=train_parts[i],
                model=model0.copy(), chain=chain, reputations=reputations,
                seed=cfg.seed, script=script,
            ))
        self.pk_by_id = {node.node_id: node.keypair.pk for node in self.nodes}
        self.node_by_id = {node.node_id: node for node in self.nodes}
        self.losses: list[float] = []

        if cfg.scheme == SCHEME_SPDL:
            try:
                self._run_election()
            except ElectionFailedError:
                pass  # retried at the next round

    # -- plumbing ---------------------------------------------------------

    def _trace(self, who: str, phase: str, action: str, detail: str = "") -> None:
        if self._collect_trace:
            self.trace.append(f"{self.tick:>7d} {who:<10} {phase:<12} {action:<18} {detail}")

    def _node_tag(self, node_id: bytes) -> str:
        return node_id.hex()[:8]

    @property
    def _honest_nodes(self) -> list[_Node]:
        return [n for n in self.nodes if not n.is_byzantine]

    @property
    def _reference(self) -> _Node:
        return self._honest_nodes[0]

    def submit_transaction(self, tx: Transaction) -> None:
        """Queue a registration tx; it rides in whichever block commits next."""
        self.pending_txs.append(tx)

    def _deliver(self, messages, kind: str) -> dict[int, list]:
        """Fan (sender_id, recipient_index | None, msg) out to per-node inboxes.

        Delivery order within the stage is sorted by (sender id, message
        hash) to remove arrival-order nondeterminism.
        """
        if kind != self._stage:
            raise SimulationError(f"{kind} delivery outside its stage ({self._stage})")
        inboxes: dict[int, list] = {i: [] for i in range(self.cfg.n_nodes)}
        ordered = sorted(messages, key=lambda m: (m[0], m[2].wire_hash()))
        for sender_id, recipient, msg in ordered:
            if recipient is None:
                for i in range(self.cfg.n_nodes):
                    inboxes[i].append(msg)
            else:
                inboxes[recipient].append(msg)
        return inboxes

    # -- leader election --------------------------------------------------

    def _run_election(self) -> None:
        cfg = self.cfg
        tip_hash = self._reference.chain.tip.hash
        seed = election_seed(self.epoch, self.attempt, tip_hash)
        submissions = []
        for node in self.nodes:
            strat = node.script.strategy_for(self.round_no) if node.script else None
            if strat == STRAT_EQUIVOCATE:
                # Forged lottery value: maximal h with a junk proof.
                submissions.append((node.node_id, b"\xff" * 32, bytes(32)))
            else:
                out = vrf_eval(node.keypair.sk, seed)
                submissions.append((node.node_id, out.h, out.pi))
        reputations = self._reference.reputations.as_dict()
        candidates, rejected = verify_candidates(
            submissions, self.registry, self.pk_by_id, reputations, seed
        )
        self.last_election_rejected = rejected
        self.tick += cfg.delta1
        try:
            self.leader_id = elect_leader(candidates)
        except ElectionFailedError:
            self.attempt += 1
            self._trace("world", "ELECTION", "failed", f"attempt={self.attempt}")
            raise
        self._trace("world", "ELECTION", "leader",
                    f"{self._node_tag(self.leader_id)} attempt={self.attempt} rejected={rejected}")

    # -- round stages ------------------------------------------------------

    def _local_gradients(self) -> tuple[list[np.ndarray | None], list[Batch]]:
        cfg = self.cfg
        outbound: list[np.ndarray | None] = []
        batches: list[Batch] = []
        for node in self.nodes:
            batch = sample_batch(node.data, cfg.batch_size, node.batch_rng)
            g = compute_gradient(node.model, node.data, batch, self.loss_spec)
            if cfg.dp is not None and cfg.scheme != SCHEME_PURE:
                g = perturb(clip_gradient(g, cfg.dp.clip), cfg.dp.sigma, node.noise_rng)
            batches.append(batch)
            outbound.append(g)
        # Byzantine substitution happens after every node consumed its honest
        # streams, so paired runs with different adversaries share batches.
        for node in self.nodes:
            if node.script is None:
                continue
            strat = node.script.strategy_for(self.round_no)
            if strat == STRAT_SILENT:
                outbound[node.index] = None
            elif strat == STRAT_SIGN_FLIP:
                outbound[node.index] = -node.script.scale * outbound[node.index]
            elif strat == STRAT_RANDOM_GAUSSIAN:
                outbound[node.index] = node.script.scale * _standard_normal(node.adv_rng, self.dim)
            elif strat == STRAT_CONSTANT:
                outbound[node.index] = np.asarray(node.script.constant, dtype=np.float64)
        return outbound, batches

    def _plain_update(self, grads: list[np.ndarray]) -> None:
        """PURE/DP path: plain broadcast-average (or the single-gradient reference)."""
        if self.cfg.update_rule == UPDATE_SINGLE_RANDOM:
            j = int(self._picker_rng.integers(self.cfg.n_nodes))
            delta = grads[j]
        else:
            delta = gar.average_aggregate(grads)
        for node in self.nodes:
            node.model = node.model - self.cfg.gamma * delta

    def _consensus_round(self, grads: list[np.ndarray]) -> tuple[bool, bytes | None]:
        cfg = self.cfg
        t = self.round_no
        quorum = cns.quorum_size(cfg.n_nodes)
        if self.leader_id is None:
            self._run_election()  # ElectionFailedError bubbles to run_round
        leader = self.node_by_id[self.leader_id]
        leader_strat = leader.script.strategy_for(t) if leader.script else None
        bc_start = self.tick
        spec = gar.GarSpec(kind=cfg.gar_kind, f=cfg.f)
        # One evaluation of the deterministic GAR stands for every honest
        # node's independent recomputation over the identical gradient set.
        delta_local = gar.aggregate(grads, spec)
        grads_by_id = {node.node_id: grads[node.index] for node in self.nodes}
        for node in self.nodes:
            node.state = cns.RoundState(epoch=self.epoch, round_no=t, start_tick=bc_start,
                                        delta_local=delta_local)

        # PRE-PREPARE
        proposals = []
        txs = tuple(self.pending_txs)
        if leader_strat == STRAT_SILENT:
            self._trace(self._node_tag(leader.node_id), cns.PRE_PREPARE, "withheld")
        elif leader_strat == STRAT_DELTA_SUB:
            # Properly signed and linked block, but with a corrupted delta:
            # followers must land on the delta-mismatch rejection path.
            bad = delta_local + leader.script.scale * _standard_normal(leader.adv_rng, self.dim)
            tip = leader.chain.tip
            block = make_block(height=tip.height + 1, epoch=self.epoch, round_no=t,
                               prev_hash=tip.hash, delta=bad,
                               proposer=leader.node_id, txs=txs)
            msg = cns.sign_message(leader.keypair.sk, cns.PRE_PREPARE, leader.node_id,
                                   self.epoch, t, block, block.hash)
            proposals.append((leader.node_id, None, msg))
            self._trace(self._node_tag(leader.node_id), cns.PRE_PREPARE, "substituted",
                        block.hash.hex()[:8])
        else:
            block, msg = cns.leader_propose(
                grads, spec, leader.chain, self.epoch, t,
                leader.node_id, leader.keypair.sk, txs,
            )
            proposals.append((leader.node_id, None, msg))
            self._trace(self._node_tag(leader.node_id), cns.PRE_PREPARE, "proposed",
                        block.hash.hex()[:8])
        inboxes = self._deliver(proposals, "bc")
        self.tick += TICK_MSG

        # PREPARE
        prepares = []
        for node in self.nodes:
            state = node.state
            strat = node.script.strategy_for(t) if node.script else None
            for msg in inboxes[node.index]:
                if msg.phase != cns.PRE_PREPARE or msg.sender != self.leader_id:
                    continue
                if msg.epoch != self.epoch or msg.round_no != t:
                    continue
                if strat == STRAT_SILENT:
                    continue
                if strat == STRAT_EQUIVOCATE:
                    # Conflicting votes: the real hash to even peers, a fake
                    # hash to odd peers, every vote sent twice.
                    fake = bytes(a ^ 0xFF for a in msg.block_hash)
                    for peer in self.nodes:
                        h = msg.block_hash if peer.index % 2 == 0 else fake
                        vote = cns.sign_message(node.keypair.sk, cns.PREPARE, node.node_id,
                                                self.epoch, t, None, h)
                        prepares.append((node.node_id, peer.index, vote))
                        prepares.append((node.node_id, peer.index, vote))
                    continue
                reason = cns.follower_validate(
                    msg, state.delta_local, node.chain, self.registry,
                    self.pk_by_id.get(msg.sender), cfg.delta_tol,
                )
                if reason is None:
                    state.block = msg.block
                    state.target_hash = msg.block_hash
                    state.prepare_sent = True
                    prepares.append((node.node_id, None,
                                     cns.sign_message(node.keypair.sk, cns.PREPARE, node.node_id,
                                                      self.epoch, t, None, msg.block_hash)))
                    self._trace(self._node_tag(node.node_id), cns.PREPARE, "vote",
                                msg.block_hash.hex()[:8])
                else:
                    self._trace(self._node_tag(node.node_id), cns.PREPARE,
                                f"reject({reason})", msg.block_hash.hex()[:8])
        inboxes = self._deliver(prepares, "bc")
        self.tick += TICK_MSG

        # COMMIT
        commits = []
        for node in self.nodes:
            state = node.state
            strat = node.script.strategy_for(t) if node.script else None
            if strat == STRAT_EQUIVOCATE:
                if state.target_hash is None and inboxes[node.index]:
                    state.target_hash = inboxes[node.index][0].block_hash
                if state.target_hash is not None:
                    fake = bytes(a ^ 0xFF for a in state.target_hash)
                    for peer in self.nodes:
                        h = state.target_hash if peer.index % 2 == 0 else fake
                        vote = cns.sign_message(node.keypair.sk, cns.COMMIT, node.node_id,
                                                self.epoch, t, None, h)
                        commits.append((node.node_id, peer.index, vote))
                        commits.append((node.node_id, peer.index, vote))
                continue
            if strat == STRAT_SILENT:
                continue
            for msg in inboxes[node.index]:
                if msg.phase != cns.PREPARE or msg.epoch != self.epoch or msg.round_no != t:
                    continue
                if not cns.verify_message(msg, self.registry, self.pk_by_id.get(msg.sender)):
                    state.invalid_count += 1
                    continue
                if cns.on_prepare(state, msg, quorum):
                    commits.append((node.node_id, None,
                                    cns.sign_message(node.keypair.sk, cns.COMMIT, node.node_id,
                                                     self.epoch, t, None, state.target_hash)))
                    self._trace(self._node_tag(node.node_id), cns.COMMIT, "vote",
                                state.target_hash.hex()[:8])
        inboxes = self._deliver(commits, "bc")
        self.tick += TICK_MSG

        # DECIDE
        for node in self.nodes:
            state = node.state
            strat = node.script.strategy_for(t) if node.script else None
            if strat in (STRAT_SILENT, STRAT_EQUIVOCATE):
                continue
            for msg in inboxes[node.index]:
                if msg.phase != cns.COMMIT or msg.epoch != self.epoch or msg.round_no != t:
                    continue
                if not cns.verify_message(msg, self.registry, self.pk_by_id.get(msg.sender)):
                    state.invalid_count += 1
                    continue
                cns.on_commit(state, msg, quorum)

        honest = self._honest_nodes
        decided = [node for node in honest if node.state.decided]
        if decided and len(decided) != len(honest):
            raise SimulationError("honest nodes split on the decide outcome")
        if decided:
            block_hash = decided[0].state.target_hash
            for node in honest:
                node.chain, node.model, node.reputations = cns.decide(
                    node.state, node.chain, node.model, cfg.gamma,
                    node.reputations, grads_by_id,
                )
                self._trace(self._node_tag(node.node_id), "DECIDE", "append",
                            block_hash.hex()[:8])
            self._assert_honest_agreement()
            ref = self._reference
            for node in self.nodes:
                if node.is_byzantine:  # keep adversaries linkable for later rounds
                    node.chain, node.model = ref.chain, ref.model.copy()
                    node.reputations = ref.reputations
            self.pending_txs.clear()
            return True, block_hash

        # Nobody decided: drain the timer, exchange view changes, abandon.
        self.tick = bc_start + cfg.delta2 + 1
        view_changes = []
        for node in self.nodes:
            strat = node.script.strategy_for(t) if node.script else None
            if strat == STRAT_SILENT:
                continue
            if cns.on_timeout(node.state, self.tick, cfg.delta2):
                view_changes.append((node.node_id, None,
                                     cns.sign_message(node.keypair.sk, cns.VIEW_CHANGE,
                                                      node.node_id, self.epoch, t,
                                                      None, bytes(32))))
                self._trace(self._node_tag(node.node_id), cns.VIEW_CHANGE, "broadcast")
        inboxes = self._deliver(view_changes, "bc")
        self.tick += TICK_MSG
        for node in self.nodes:
            state = node.state
            for msg in inboxes[node.index]:
                if msg.phase != cns.VIEW_CHANGE or msg.epoch != self.epoch or msg.round_no != t:
                    continue
                if not cns.verify_message(msg, self.registry, self.pk_by_id.get(msg.sender)):
                    state.invalid_count += 1
                    continue
                cns.on_view_change(state, msg, quorum)
        abandoned = [node for node in honest if node.state.abandoned]
        if len(abandoned) != len(honest):
            # Below the view-change quorum (only possible past the declared
            # fault budget): the round simply fails, nothing is appended.
            self._trace("world", "ROUND", "stalled", f"round={t}")
        else:
            self._trace("world", "ROUND", "abandoned", f"round={t}")
        self.attempt += 1
        self.leader_id = None
        try:
            self._run_election()
        except ElectionFailedError:
            pass  # retried next round
        return False, None

    def _assert_honest_agreement(self) -> None:
        ref = self._reference
        for node in self._honest_nodes:
            if node.chain.tip.hash != ref.chain.tip.hash or len(node.chain) != len(ref.chain):
                raise SimulationError("honest chain divergence")
            if not np.array_equal(node.model, ref.model):
                raise SimulationError("honest model divergence")
            if node.reputations != ref.reputations:
                raise SimulationError("honest reputation divergence")

    # -- round/run drivers -------------------------------------------------

    def run_round(self) -> RoundMetrics:
        cfg = self.cfg
        t = self.round_no
        pre_model = self._reference.model

        wall0 = time.perf_counter()
        self._stage = "lgc"
        lgc_t0 = self.tick
        outbound, batches = self._local_gradients()
        self.tick += TICK_LGC
        lgc_ticks = self.tick - lgc_t0
        wall1 = time.perf_counter()

        self._stage = "ge"
        ge_t0 = self.tick
        grads = [g if g is not None else np.zeros(self.dim) for g in outbound]
        self.last_gradients = grads
        self.tick += TICK_GE
        ge_ticks = self.tick - ge_t0
        wall2 = time.perf_counter()

        self._stage = "bc"
        bc_t0 = self.tick
        leader_snapshot: bytes | None = None
        if cfg.scheme == SCHEME_SPDL:
            try:
                committed, block_hash = self._consensus_round(grads)
                leader_snapshot = self.leader_id
            except ElectionFailedError:
                committed, block_hash = False, None
        else:
            self._plain_update(grads)
            committed, block_hash = True, None
        self.tick += 0 if cfg.scheme == SCHEME_SPDL else TICK_MSG
        bc_ticks = self.tick - bc_t0
        wall3 = time.perf_counter()
        self._stage = "idle"

        # Metrics-only work stays outside the timed stage windows.
        losses = [
            compute_loss(pre_model, node.data, batches[i].indices, self.loss_spec)
            for i, node in enumerate(self.nodes)
        ]
        self.losses.append(float(np.mean(losses)))
        err = None
        if self.testset is not None and self.loss_spec.kind == SOFTMAX:
            err = test_error(self._reference.model, self.testset, self.loss_spec)
        rep_min = None
        if cfg.scheme == SCHEME_SPDL:
            rep_min = self._reference.reputations.min()

        self.round_no += 1
        return RoundMetrics(
            epoch=self.epoch, round_no=t,
            leader=leader_snapshot, committed=committed, block_hash=block_hash,
            test_error=err, reputation_min=rep_min,
            t_lgc_ticks=lgc_ticks, t_ge_ticks=ge_ticks, t_bc_ticks=bc_ticks,
            t_lgc_ms=(wall1 - wall0) * 1e3,
            t_ge_ms=(wall2 - wall1) * 1e3,
            t_bc_ms=(wall3 - wall2) * 1e3,
            wall_ms=(wall3 - wall0) * 1e3,
        )

    def result(self, metrics: list[RoundMetrics]) -> ExperimentResult:
        ref = self._reference
        spdl = self.cfg.scheme == SCHEME_SPDL
        return ExperimentResult(
            metrics=metrics,
            losses=list(self.losses),
            final_model=ref.model.copy(),
            chain=ref.chain if spdl else None,
            reputations=ref.reputations.as_dict() if spdl else None,
            byz_indices=self.byz_indices,
            trace=list(self.trace),
        )


def run_experiment(
    cfg: SimConfig,
    train_parts: Sequence[Dataset],
    testset: Dataset | None,
    loss_spec: LossSpec,
    collect_trace: bool = False,
) -> ExperimentResult:
    """Run T rounds and collect metrics; all honest nodes end bitwise equal."""
    world = World(cfg, train_parts, testset, loss_spec, collect_trace=collect_trace)
    metrics = [world.run_round() for _ in range(cfg.rounds)]
    return world.result(metrics)


def empirical_regret(run_with_byz: ExperimentResult, run_without: ExperimentResult) -> np.ndarray:
    """Partial sums R(tau) of the per-round loss gap between paired runs.

    Both runs must share seed, data and round count; the clean run is
    expected to use the single-random-gradient update rule.
    """
    if len(run_with_byz.losses) != len(run_without.losses):
        raise ValueError("paired runs must have the same round count")
    gaps = np.asarray(run_with_byz.losses) - np.asarray(run_without.losses)
    return np.cumsum(gaps)
