"""UCI Communities and Crime: ingestion and conversion to one task per state.

Input is the raw ``communities.data`` file: comma separated, no header, ``?``
for missing values.  Every predictive column that contains a ``?`` anywhere is
dropped; the feature manifest records what survived and what was dropped.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset

MIN_COMMUNITIES = 20

UCI_COLUMNS = (
    "state county community communityname fold population householdsize racepctblack "
    "racePctWhite racePctAsian racePctHisp agePct12t21 agePct12t29 agePct16t24 agePct65up "
    "numbUrban pctUrban medIncome pctWWage pctWFarmSelf pctWInvInc pctWSocSec pctWPubAsst "
    "pctWRetire medFamInc perCapInc whitePerCap blackPerCap indianPerCap AsianPerCap "
    "OtherPerCap HispPerCap NumUnderPov PctPopUnderPov PctLess9thGrade PctNotHSGrad "
    "PctBSorMore PctUnemployed PctEmploy PctEmplManu PctEmplProfServ PctOccupManu "
    "PctOccupMgmtProf MalePctDivorce MalePctNevMarr FemalePctDiv TotalPctDiv PersPerFam "
    "PctFam2Par PctKids2Par PctYoungKids2Par PctTeen2Par PctWorkMomYoungKids PctWorkMom "
    "NumIlleg PctIlleg NumImmig PctImmigRecent PctImmigRec5 PctImmigRec8 PctImmigRec10 "
    "PctRecentImmig PctRecImmig5 PctRecImmig8 PctRecImmig10 PctSpeakEnglOnly "
    "PctNotSpeakEnglWell PctLargHouseFam PctLargHouseOccup PersPerOccupHous "
    "PersPerOwnOccHous PersPerRentOccHous PctPersOwnOccup PctPersDenseHous PctHousLess3BR "
    "MedNumBR HousVacant PctHousOccup PctHousOwnOcc PctVacantBoarded PctVacMore6Mos "
    "MedYrHousBuilt PctHousNoPhone PctWOFullPlumb OwnOccLowQuart OwnOccMedVal OwnOccHiQuart "
    "RentLowQ RentMedian RentHighQ MedRent MedRentPctHousInc MedOwnCostPctInc "
    "MedOwnCostPctIncNoMtg NumInShelters NumStreet PctForeignBorn PctBornSameState "
    "PctSameHouse85 PctSameCity85 PctSameState85 LemasSwornFT LemasSwFTPerPop "
    "LemasSwFTFieldOps LemasSwFTFieldPerPop LemasTotalReq LemasTotReqPerPop PolicReqPerOffic "
    "PolicPerPop RacialMatchCommPol PctPolicWhite PctPolicBlack PctPolicHisp PctPolicAsian "
    "PctPolicMinor OfficAssgnDrugUnits NumKindsDrugsSeiz PolicAveOTWorked LandArea PopDens "
    "PctUsePubTrans PolicCars PolicOperBudg LemasPctPolicOnPatr LemasGangUnitDeploy "
    "LemasPctOfficDrugUn PolicBudgPerPop ViolentCrimesPerPop"
).split()

IDENTIFIER_COLUMNS = ("state", "county", "community", "communityname", "fold")
TARGET_COLUMN = "ViolentCrimesPerPop"
BLACK_COLUMN = "racepctblack"
RACE_COLUMNS = ("racepctblack", "racePctWhite", "racePctAsian", "racePctHisp")
MISSING = "?"


class CcDataError(ValueError):
    pass


@dataclass(frozen=True)
class CcRecord:
    state: int
    communityname: str
    features: np.ndarray  # manifest order
    violent_crime: float
    race: np.ndarray  # RACE_COLUMNS order


@dataclass(frozen=True)
class CcData:
    records: list[CcRecord]
    feature_columns: tuple[str, ...]
    dropped_columns: tuple[str, ...]


@dataclass(frozen=True)
class CcTaskSet:
    train: list[Dataset]
    holdout: list[Dataset]
    feature_columns: tuple[str, ...]
    train_states: tuple[int, ...] = field(default=())
    holdout_states: tuple[int, ...] = field(default=())


def read_names(path) -> list[str]:
    """Column names from the ``@attribute`` lines of ``communities.names``."""
    names = re.findall(r"^@attribute\s+(\S+)", Path(path).read_text(), flags=re.M)
    if not names:
        raise CcDataError(f"{path}: no @attribute lines")
    return names


def load_cc(path, columns: Optional[Sequence[str]] = None) -> CcData:
    columns = tuple(columns or UCI_COLUMNS)
    for required in IDENTIFIER_COLUMNS[:1] + (TARGET_COLUMN,) + RACE_COLUMNS:
        if required not in columns:
            raise CcDataError(f"column list lacks {required!r}")
    with open(path, newline="") as fh:
        rows = []
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(columns):
                raise CcDataError(f"{path}: row {lineno} has {len(row)} columns, expected {len(columns)}")
            rows.append((lineno, [v.strip() for v in row]))
    if not rows:
        raise CcDataError(f"{path}: no records")

    col = {name: i for i, name in enumerate(columns)}
    candidates = [c for c in columns if c not in IDENTIFIER_COLUMNS and c != TARGET_COLUMN]
    has_missing = {c for c in columns if any(r[col[c]] == MISSING for _, r in rows)}
    for c in (TARGET_COLUMN, "state") + RACE_COLUMNS:
        if c in has_missing:
            raise CcDataError(f"{path}: required column {c!r} has missing values")
    features = tuple(c for c in candidates if c not in has_missing)
    dropped = tuple(c for c in candidates if c in has_missing)

    feat_idx = [col[c] for c in features]
    race_idx = [col[c] for c in RACE_COLUMNS]
    records = []
    for lineno, r in rows:
        try:
            x = np.array([float(r[i]) for i in feat_idx])
            target = float(r[col[TARGET_COLUMN]])
            race = np.array([float(r[i]) for i in race_idx])
            state = int(r[col["state"]])
        except ValueError as exc:
            raise CcDataError(f"{path}: row {lineno}: {exc}") from None
        if not (np.all((x >= 0) & (x <= 1)) and 0 <= target <= 1):
            raise CcDataError(f"{path}: row {lineno}: values outside [0, 1]")
        name = r[col["communityname"]] if "communityname" in col else ""
        records.append(CcRecord(state, name, x, target, race))
    return CcData(records, features, dropped)


def median_labels(crime: np.ndarray) -> np.ndarray:
    """1 where the crime rate is strictly above the group median."""
    return (crime > np.median(crime)).astype(np.int64)


def race_attribute(race: np.ndarray) -> np.ndarray:
    """0 (protected) where the black share ranks first or second; ties count in its favour."""
    race = np.atleast_2d(race)
    black = race[:, :1]
    rank = 1 + np.sum(race[:, 1:] > black, axis=1)
    return np.where(rank <= 2, 0, 1).astype(np.int64)


def state_dataset(records: Sequence[CcRecord], state: int) -> Dataset:
    X = np.array([r.features for r in records])
    Y = median_labels(np.array([r.violent_crime for r in records]))
    A = race_attribute(np.array([r.race for r in records]))
    return Dataset(X, Y, A, tag=f"state{state}")


def build_tasks(
    data: CcData,
    holdout_count: int = 5,
    seed: int = 0,
    min_communities: int = MIN_COMMUNITIES,
) -> CcTaskSet:
    by_state: dict[int, list[CcRecord]] = {}
    for r in data.records:
        by_state.setdefault(r.state, []).append(r)
    states = sorted(s for s, recs in by_state.items() if len(recs) >= min_communities)
    if len(states) < holdout_count + 1:
        raise CcDataError(
            f"only {len(states)} states have at least {min_communities} communities; "
            f"need more than {holdout_count}"
        )
    rng = np.random.default_rng(seed)
    held = sorted(states[i] for i in rng.choice(len(states), size=holdout_count, replace=False))
    train = [s for s in states if s not in held]
    return CcTaskSet(
        train=[state_dataset(by_state[s], s) for s in train],
        holdout=[state_dataset(by_state[s], s) for s in held],
        feature_columns=data.feature_columns,
        train_states=tuple(train),
        holdout_states=tuple(held),
    )


def support_query(dataset: Dataset, K: int, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """K rows for the inner step and K further rows for the meta step.

    Disjoint when the task has at least ``2K`` rows; otherwise the query rows are
    drawn with replacement from whatever the support set left over.
    """
    n = len(dataset)
    if n >= 2 * K:
        idx = rng.permutation(n)[: 2 * K]
        return dataset.subset(idx[:K]), dataset.subset(idx[K:])
    if n >= K:
        perm = rng.permutation(n)
        support, rest = perm[:K], perm[K:]
    else:
        support = rng.integers(n, size=K)
        rest = np.setdiff1d(np.arange(n), support)
    pool = rest if len(rest) else np.arange(n)
    return dataset.subset(support), dataset.subset(pool[rng.integers(len(pool), size=K)])


def sample_task_batch(
    taskset: CcTaskSet, meta_batch: int = 8, K: int = 10, seed=0
) -> list[tuple[int, Dataset, Dataset]]:
    """One meta-batch of ``(task index, support, query)`` drawn from the training states."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_tasks = len(taskset.train)
    chosen = rng.choice(n_tasks, size=meta_batch, replace=meta_batch > n_tasks)
    return [(int(i), *support_query(taskset.train[i], K, rng)) for i in chosen]


def cache_meta_batches(taskset: CcTaskSet, count: int = 100, meta_batch: int = 8, K: int = 10, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [sample_task_batch(taskset, meta_batch, K, rng) for _ in range(count)]


def finetune_eval_split(dataset: Dataset, finetune_n: int = 10, seed=0) -> tuple[Dataset, Dataset]:
    """``finetune_n`` random rows to adapt on; every remaining row is for evaluation."""
    n = len(dataset)
    if n - finetune_n < finetune_n:
        raise CcDataError(f"{dataset.tag}: {n} rows cannot give {finetune_n} fine-tune and {finetune_n} eval rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    return dataset.subset(np.sort(perm[:finetune_n])), dataset.subset(np.sort(perm[finetune_n:]))
