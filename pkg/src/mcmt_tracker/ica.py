"""
Inter-camera association over topology links.

For every link the exiting tracklets of the upstream camera are matched to
the entering tracklets of the downstream camera, either on a tracklet-level
distance matrix or on the box-level matrix refined by re-ranking, travel
time and occlusion. Matches from all links are merged into global
identities in `postprocess`.
"""
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from loguru import logger
from scipy import sparse
from scipy.cluster.hierarchy import DisjointSet

from .config import IcaConfig
from .core import CameraTopology, Tracklet, TopologyLink, cosine_matrix, zone_of
from .errors import UsageError
from .matching import linear_assignment

# Keeps refined entries finite.
_MAX_EXPONENT = 50.0

TrackletKey = tuple[int, int]

class Granularity(str, Enum):
    TRACKLET = "tracklet"
    BOX = "box"

def tracklet_key(tracklet: Tracklet) -> TrackletKey:
    return tracklet.camera_id, tracklet.track_id

@dataclass(frozen=True, eq=False)
class PoolPair:
    exiting: list[Tracklet]
    entering: list[Tracklet]
    link: TopologyLink
    exit_times: list[int] = field(default_factory=list)
    entry_times: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.exiting or not self.entering

    def travel_times(self) -> np.ndarray:
        """
        Travel time t_in(j) - t_out(i) for every (exiting, entering) pair.
        """
        return (
            np.asarray(self.entry_times, dtype=np.float64)[None, :]
            - np.asarray(self.exit_times, dtype=np.float64)[:, None]
        )

@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    row_map: tuple
    col_map: tuple
    granularity: Granularity

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise UsageError("Distance matrix must be two-dimensional")
        if values.shape != (len(self.row_map), len(self.col_map)):
            raise UsageError(
                f"Distance matrix shape {values.shape} does not match its maps "
                f"({len(self.row_map)}, {len(self.col_map)})"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise UsageError("Distance matrix entries must be finite and non-negative")

        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @staticmethod
    def _owners(mapping) -> np.ndarray:
        return np.array(
            [entry if isinstance(entry, (int, np.integer)) else entry[0] for entry in mapping],
            dtype=np.int64
        )

    @property
    def row_tracklets(self) -> np.ndarray:
        return self._owners(self.row_map)

    @property
    def col_tracklets(self) -> np.ndarray:
        return self._owners(self.col_map)

    def with_values(self, values: np.ndarray) -> "DistanceMatrix":
        return replace(self, values=values)

@dataclass(frozen=True, eq=False)
class LinkMatch:
    exiting: Tracklet
    entering: Tracklet
    distance: float
    exit_time: int
    entry_time: int
    votes: int = 1
    link: TopologyLink | None = None

@dataclass
class GlobalAssignment:
    pairs: list[LinkMatch]
    components: list[list[TrackletKey]]
    global_ids: dict[TrackletKey, int]

    def global_id(self, tracklet: Tracklet) -> int | None:
        return self.global_ids.get(tracklet_key(tracklet))

def _last_zone_exit(tracklet: Tracklet, zones) -> tuple[int | None, int | None]:
    for box in reversed(tracklet.boxes):
        zone_id = zone_of(box, zones)
        if zone_id is not None:
            return zone_id, box.frame

    return None, None

def _first_zone_entry(tracklet: Tracklet, zones) -> tuple[int | None, int | None]:
    for box in tracklet.boxes:
        zone_id = zone_of(box, zones)
        if zone_id is not None:
            return zone_id, box.frame

    return None, None

def build_pool(
    out_tracks: Sequence[Tracklet],
    in_tracks: Sequence[Tracklet],
    link: TopologyLink,
    topology: CameraTopology
) -> PoolPair:
    """
    Collect the tracklets that leave through the link's exit zone before
    `link.t_out` and those that enter through its entry zone after `link.t_in`.
    """
    out_camera = topology.camera(link.cam_out)
    in_camera = topology.camera(link.cam_in)
    out_camera.zone(link.zone_out)
    in_camera.zone(link.zone_in)

    exiting, exit_times = [], []
    for tracklet in sorted(out_tracks, key=lambda t: t.track_id):
        if tracklet.camera_id != link.cam_out:
            raise UsageError(f"{tracklet} does not belong to camera {link.cam_out}")

        zone_id, frame = _last_zone_exit(tracklet, out_camera.zones)
        if zone_id == link.zone_out and frame < link.t_out:
            exiting.append(tracklet)
            exit_times.append(frame)

    entering, entry_times = [], []
    for tracklet in sorted(in_tracks, key=lambda t: t.track_id):
        if tracklet.camera_id != link.cam_in:
            raise UsageError(f"{tracklet} does not belong to camera {link.cam_in}")

        zone_id, frame = _first_zone_entry(tracklet, in_camera.zones)
        if zone_id == link.zone_in and frame > link.t_in:
            entering.append(tracklet)
            entry_times.append(frame)

    return PoolPair(exiting, entering, link, exit_times, entry_times)

def tracklet_distance(first: Tracklet, second: Tracklet, k_mean: int) -> float:
    """
    Mean of the `k_mean` smallest box-to-box cosine distances.
    """
    if k_mean < 1:
        raise UsageError(f"k_mean must be at least 1, got {k_mean}")

    distances = np.sort(cosine_matrix(first.feature_matrix(), second.feature_matrix()), axis=None)
    return float(np.mean(distances[:k_mean]))

def _outside_window(travel: np.ndarray, link: TopologyLink) -> np.ndarray:
    return (travel <= link.t_low) | (travel >= link.t_upp)

def build_tracklet_matrix(pool: PoolPair, config: IcaConfig) -> DistanceMatrix:
    values = np.zeros((len(pool.exiting), len(pool.entering)))
    for i, exiting in enumerate(pool.exiting):
        for j, entering in enumerate(pool.entering):
            values[i, j] = tracklet_distance(exiting, entering, config.k_mean)

    if config.use_time_window and values.size:
        values = np.where(
            _outside_window(pool.travel_times(), pool.link),
            values * config.alpha_penalty,
            values
        )

    return DistanceMatrix(
        values,
        tuple(range(len(pool.exiting))),
        tuple(range(len(pool.entering))),
        Granularity.TRACKLET
    )

def _stacked_features(tracklets: Sequence[Tracklet]) -> tuple[np.ndarray, tuple]:
    mapping = tuple(
        (index, box_index)
        for index, tracklet in enumerate(tracklets)
        for box_index in range(tracklet.length)
    )
    if not tracklets:
        return np.empty((0, 0)), mapping

    return np.concatenate([tracklet.feature_matrix() for tracklet in tracklets]), mapping

def build_box_matrix(pool: PoolPair) -> DistanceMatrix:
    exiting, row_map = _stacked_features(pool.exiting)
    entering, col_map = _stacked_features(pool.entering)

    if not row_map or not col_map:
        values = np.zeros((len(row_map), len(col_map)))
    else:
        values = cosine_matrix(exiting, entering)

    return DistanceMatrix(values, row_map, col_map, Granularity.BOX)

def _top_ranks(values: np.ndarray, count: int) -> np.ndarray:
    """
    Column indices of the `count` smallest entries of every row in
    ascending order, ties to the lower index.
    """
    if count >= values.shape[1]:
        return np.argsort(values, axis=1, kind="stable")

    candidates = np.argpartition(values, count - 1, axis=1)[:, :count]
    order = np.lexsort((candidates, np.take_along_axis(values, candidates, axis=1)))
    return np.take_along_axis(candidates, order, axis=1)

def _reciprocal_neighbours(ranks: np.ndarray, k: int) -> sparse.csr_matrix:
    """
    Row i marks every j among the k + 1 nearest of i that holds i among its
    own k + 1 nearest.
    """
    count = ranks.shape[0]
    forward = ranks[:, :k + 1]
    rows = np.broadcast_to(np.arange(count)[:, None], forward.shape)

    member = np.zeros((count, count), dtype=bool)
    member[rows, forward] = True
    mutual = member[forward, rows]

    return sparse.csr_matrix(
        (np.ones(int(mutual.sum())), (rows[mutual], forward[mutual])), shape=(count, count)
    )

def _jaccard_overlap(weights: sparse.csr_matrix, query_num: int) -> np.ndarray:
    """
    Sum over columns of min(w[q], w[g]) for every query row q and gallery row g.
    """
    shared = np.zeros((query_num, weights.shape[0] - query_num))
    columns = weights.tocsc()
    for col in range(columns.shape[1]):
        start, end = columns.indptr[col], columns.indptr[col + 1]
        rows, values = columns.indices[start:end], columns.data[start:end]

        is_query = rows < query_num
        if is_query.any() and not is_query.all():
            shared[np.ix_(rows[is_query], rows[~is_query] - query_num)] += np.minimum.outer(
                values[is_query], values[~is_query]
            )

    return shared

def rerank(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> DistanceMatrix:
    """
    k-reciprocal re-ranking of a box-grained matrix: the output blends the
    input distances with the Jaccard distance between the expanded
    k-reciprocal neighbour sets of each exiting and entering box.

    Matrices with fewer than two rows or columns have no neighbourhood to
    compare and are only scaled by the blend weight.
    """
    lambda_value = config.rerank_lambda
    query_num, gallery_num = matrix.shape

    if query_num < 2 or gallery_num < 2:
        return matrix.with_values(lambda_value * matrix.values)

    query, _ = _stacked_features(pool.exiting)
    gallery, _ = _stacked_features(pool.entering)
    original = np.block([
        [cosine_matrix(query, query), matrix.values],
        [matrix.values.T, cosine_matrix(gallery, gallery)],
    ])
    all_num = original.shape[0]

    scale = original.max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    original = original / scale

    k1 = min(config.rerank_k1, all_num - 1)
    k2 = min(config.rerank_k2, all_num)
    half_k1 = int(np.around(k1 / 2.0))
    ranks = _top_ranks(original, max(k1 + 1, k2))

    neighbours = _reciprocal_neighbours(ranks, k1)
    half = _reciprocal_neighbours(ranks, half_k1)
    half_sizes = np.asarray(half.sum(axis=1)).ravel()

    # A neighbour's half-size set joins when more than 2/3 of it is already in.
    overlap = neighbours.multiply(neighbours @ half.T).tocoo()
    absorb = overlap.data > 2.0 / 3.0 * half_sizes[overlap.col]
    chosen = sparse.csr_matrix(
        (np.ones(int(absorb.sum())), (overlap.row[absorb], overlap.col[absorb])),
        shape=(all_num, all_num),
    )
    expansion = (neighbours + chosen @ half).tocoo()

    weight = np.exp(-original[expansion.row, expansion.col])
    weight /= np.bincount(expansion.row, weight, minlength=all_num)[expansion.row]
    weights = sparse.csr_matrix((weight, (expansion.row, expansion.col)), shape=(all_num, all_num))

    if k2 != 1:
        rows = np.repeat(np.arange(all_num), k2)
        averaging = sparse.csr_matrix(
            (np.full(rows.size, 1.0 / k2), (rows, ranks[:, :k2].ravel())),
            shape=(all_num, all_num),
        )
        weights = averaging @ weights

    shared = _jaccard_overlap(sparse.csr_matrix(weights), query_num)
    jaccard = 1.0 - shared / (2.0 - shared)

    final = lambda_value * matrix.values + (1.0 - lambda_value) * jaccard
    return matrix.with_values(np.clip(final, 0.0, None))

def _pair_travel_times(matrix: DistanceMatrix, pool: PoolPair) -> np.ndarray:
    travel = pool.travel_times()
    return travel[matrix.row_tracklets[:, None], matrix.col_tracklets[None, :]]

def _travel_scale(link: TopologyLink, config: IcaConfig) -> float:
    if link.beta_t is not None:
        return link.beta_t
    if config.beta_t is not None:
        return config.beta_t

    return link.expected_travel_time

def refine_time(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> DistanceMatrix:
    """
    Scale entries whose travel time falls outside the link window by an
    exponential in the distance to the window.
    """
    if matrix.values.size == 0:
        return matrix

    link = pool.link
    travel = _pair_travel_times(matrix, pool)
    beta = _travel_scale(link, config)

    exponent = np.zeros_like(travel)
    early = travel < link.t_low
    late = travel > link.t_upp
    exponent[early] = config.alpha_t * (link.t_low - travel[early]) / beta
    exponent[late] = config.alpha_t * (travel[late] - link.t_upp) / beta

    return matrix.with_values(matrix.values * np.exp(np.minimum(exponent, _MAX_EXPONENT)))

def _occlusion_factors(tracklets: Sequence[Tracklet], mapping, config: IcaConfig) -> np.ndarray:
    rates = np.array([tracklets[index].boxes[box_index].occlusion for index, box_index in mapping])
    return np.where(rates > config.r_thre, np.exp(config.alpha_o * (1.0 + rates)), 1.0)

def refine_occlusion(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> DistanceMatrix:
    if matrix.values.size == 0:
        return matrix

    row_factors = _occlusion_factors(pool.exiting, matrix.row_map, config)
    col_factors = _occlusion_factors(pool.entering, matrix.col_map, config)

    return matrix.with_values(matrix.values * row_factors[:, None] * col_factors[None, :])

def k_reciprocal_sets(values, k: int) -> list[list[int]]:
    """
    For every row, the columns among its k nearest that also hold the row
    among their own k nearest rows. Ties go to the lower index.
    """
    if k < 1:
        raise UsageError(f"k must be at least 1, got {k}")

    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    if values.size == 0:
        return [[] for _ in range(rows)]

    row_neighbours = np.argsort(values, axis=1, kind="stable")[:, :k]
    col_neighbours = np.argsort(values, axis=0, kind="stable")[:k, :]

    near_col = np.zeros((rows, cols), dtype=bool)
    near_col[col_neighbours, np.arange(cols)[None, :]] = True
    mutual = near_col[np.arange(rows)[:, None], row_neighbours]

    return [row_neighbours[row][mutual[row]].tolist() for row in range(rows)]

def _vote(values: np.ndarray, row: int, members: list[int], col_owners: np.ndarray) -> tuple[int, float] | None:
    if not members:
        return None

    members = np.asarray(members)
    owners = col_owners[members]
    best = None
    for owner in np.unique(owners):
        owned = members[owners == owner]
        candidate = (-len(owned), float(values[row, owned].mean()), int(owner))
        if best is None or candidate < best:
            best = candidate

    return best[2], best[1]

def _resolve_votes(
    votes: dict[int, dict[int, list[float]]],
    pool: PoolPair,
    min_votes: int
) -> list[LinkMatch]:
    claims = []
    for exiting, ballots in votes.items():
        ranked = sorted(
            (-len(distances), float(np.mean(distances)), entering)
            for entering, distances in ballots.items()
        )
        neg_votes, distance, entering = ranked[0]
        if -neg_votes >= min_votes:
            claims.append((neg_votes, distance, exiting, entering))

    matches, taken = [], set()
    for neg_votes, distance, exiting, entering in sorted(claims):
        if entering in taken:
            continue

        taken.add(entering)
        matches.append(_link_match(pool, exiting, entering, distance, -neg_votes))

    return sorted(matches, key=lambda match: match.exiting.track_id)

def _link_match(pool: PoolPair, exiting: int, entering: int, distance: float, votes: int = 1) -> LinkMatch:
    return LinkMatch(
        exiting=pool.exiting[exiting],
        entering=pool.entering[entering],
        distance=distance,
        exit_time=pool.exit_times[exiting],
        entry_time=pool.entry_times[entering],
        votes=votes,
        link=pool.link,
    )

def associate_box_grained(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> list[LinkMatch]:
    """
    Each row votes for the entering tracklet owning most of its k-reciprocal
    neighbours. Exiting tracklets pair with the entering tracklet they gave
    the most votes, given enough votes; conflicts go to the larger vote.
    """
    min_votes = config.min_votes if matrix.granularity == Granularity.BOX else 1
    row_owners = matrix.row_tracklets
    col_owners = matrix.col_tracklets

    votes = defaultdict(lambda: defaultdict(list))
    reciprocal = k_reciprocal_sets(matrix.values, config.k_reciprocal)
    for row, members in enumerate(reciprocal):
        ballot = _vote(matrix.values, row, members, col_owners)
        if ballot is None:
            continue

        entering, distance = ballot
        votes[int(row_owners[row])][entering].append(distance)

    return _resolve_votes(votes, pool, min_votes)

def associate_hungarian(matrix: DistanceMatrix, threshold: float) -> list[tuple[int, int, float]]:
    matches, _, _ = linear_assignment(matrix.values, threshold)
    return [(row, col, float(matrix.values[row, col])) for row, col in matches]

def _associate_box_hungarian(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> list[LinkMatch]:
    row_owners = matrix.row_tracklets
    col_owners = matrix.col_tracklets

    votes = defaultdict(lambda: defaultdict(list))
    for row, col, distance in associate_hungarian(matrix, config.match_threshold):
        votes[int(row_owners[row])][int(col_owners[col])].append(distance)

    return _resolve_votes(votes, pool, config.min_votes)

def build_matrix(pool: PoolPair, config: IcaConfig) -> DistanceMatrix:
    """
    The link's distance matrix at the configured granularity, with the
    enabled refinements applied to box-level matrices.
    """
    if config.matrix == Granularity.TRACKLET.value:
        return build_tracklet_matrix(pool, config)

    matrix = build_box_matrix(pool)
    if config.use_rerank:
        matrix = rerank(matrix, pool, config)
    if config.use_time_window:
        matrix = refine_time(matrix, pool, config)
    if config.use_occlusion:
        matrix = refine_occlusion(matrix, pool, config)

    return matrix

def associate_matrix(matrix: DistanceMatrix, pool: PoolPair, config: IcaConfig) -> list[LinkMatch]:
    if config.method == "reciprocal":
        return associate_box_grained(matrix, pool, config)
    if matrix.granularity == Granularity.TRACKLET:
        return [
            _link_match(pool, row, col, distance)
            for row, col, distance in associate_hungarian(matrix, config.match_threshold)
        ]

    return _associate_box_hungarian(matrix, pool, config)

def associate_link(pool: PoolPair, config: IcaConfig) -> list[LinkMatch]:
    if pool.empty:
        return []

    matches = associate_matrix(build_matrix(pool, config), pool, config)

    logger.bind(link=pool.link.name).debug(
        f"Link {pool.link.name}: {len(pool.exiting)} exiting, {len(pool.entering)} entering, "
        f"{len(matches)} matched"
    )

    return matches

def postprocess(
    matches: Sequence[LinkMatch],
    tracklets: Sequence[Tracklet] = (),
    include_singletons: bool = False
) -> GlobalAssignment:
    """
    Drop temporally invalid matches and merge the rest into global identities.

    Global ids are dense, starting at 1, in order of each component's
    smallest (camera, track) key. Tracklets without a match only get an
    id when `include_singletons` is set.
    """
    valid = [match for match in matches if match.entry_time > match.exit_time]
    dropped = len(matches) - len(valid)
    if dropped:
        logger.debug(f"Dropped {dropped} temporally invalid matches")

    merged = DisjointSet()
    if include_singletons:
        for tracklet in tracklets:
            merged.add(tracklet_key(tracklet))

    for match in valid:
        first, second = tracklet_key(match.exiting), tracklet_key(match.entering)
        merged.add(first)
        merged.add(second)
        merged.merge(first, second)

    components = sorted((sorted(subset) for subset in merged.subsets()), key=lambda keys: keys[0])
    global_ids = {
        key: global_id
        for global_id, keys in enumerate(components, start=1)
        for key in keys
    }

    return GlobalAssignment(valid, components, global_ids)
