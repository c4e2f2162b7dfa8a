from __future__ import annotations

import json
from pathlib import Path

import pytest

from fxbook.grid import Grid, grid_from_json

DATA_DIR = Path(__file__).parent / "data"

MEDALS_ROWS = [
    ["Rank", "Nation", "Gold", "Silver", "Bronze", "Total"],
    [1, "Brazil", 13, 18, 12, 43],
    [2, "Argentina", 7, 4, 7, 18],
    [3, "Chile", 7, 2, 3, 12],
    [4, "Colombia", 5, 5, 4, 14],
    [5, "Venezuela", 4, 6, 6, 16],
    [6, "Uruguay", 1, 1, 0, 2],
    [7, "Peru", 0, 1, 0, 1],
    [8, "Panama", 0, 0, 2, 2],
    [8, "Bolivia", 0, 0, 2, 2],
    [10, "Paraguay", 0, 0, 1, 1],
]

ABSDOC_ROWS = [
    ["Data", "Unnamed: 1", "Unnamed: 2"],
    [-4, None, None],
]

TEAMS_ROWS = [
    ["Team", "Wins"],
    ["New York Yankees", 99],
    ["Tampa Bay Rays", 96],
    ["Toronto Blue Jays", 87],
    ["Boston Red Sox", 86],
    ["Baltimore Orioles", 84],
    ["Texas Rangers", 79],
    ["Oakland Athletics", 67],
]


@pytest.fixture
def medals_grid() -> Grid:
    return Grid.from_rows(MEDALS_ROWS, source_id="medals")


@pytest.fixture
def absdoc_grid() -> Grid:
    return Grid.from_rows(ABSDOC_ROWS, source_id="absdoc")


@pytest.fixture
def teams_grid() -> Grid:
    return Grid.from_rows(TEAMS_ROWS, source_id="teams")


def load_conformance_cases() -> list:
    cases = []
    with open(DATA_DIR / "conformance.jsonl") as fh:
        for line in fh:
            if line.strip():
                cases.append(json.loads(line))
    return cases


@pytest.fixture(scope="session")
def conformance_cases() -> list:
    return load_conformance_cases()


def grid_for_case(case: dict) -> Grid:
    return grid_from_json(case["grid"])
