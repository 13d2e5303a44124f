#!/usr/bin/env python3
"""Generate the scripted action tables used by the fixture experiment plans.

Each table fixes every nation's actions on every day so that the summed
escalation score hits a chosen total (and, where set, a chosen day-14 sum).
Output is deterministic.

    python3 scripts/gen_fixture_scripts.py [--out configs/scripts]
"""

import argparse
import itertools
import random
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
NATIONS = ["Purple", "White", "Pink", "Red", "Yellow", "Blue", "Green", "Orange"]
DAYS = 14
MAX_COMBO = 3

# Relative share of each day's total taken by each nation.
WEIGHTS = {
    "Purple": 1.6,
    "White": 0.25,
    "Pink": 0.7,
    "Red": 1.9,
    "Yellow": 0.9,
    "Blue": 1.3,
    "Green": 0.45,
    "Orange": 1.0,
}

# label: (total over 8 nations x 14 days, day-14 total, category preferences)
TREATMENTS = {
    "baseline": (713, 89, {"posturing": 1.0, "non_violent_escalation": 0.8, "violent_escalation": 0.5}),
    "t0.5": (444, 57, {"posturing": 1.0, "non_violent_escalation": 0.6, "violent_escalation": 0.2}),
    "t0.01": (373, 54, {"posturing": 1.0, "non_violent_escalation": 0.4, "violent_escalation": 0.1}),
    "context": (656, 84, {"posturing": 1.0, "non_violent_escalation": 0.8, "violent_escalation": 0.4}),
    "planning": (516, 66, {"posturing": 0.8, "non_violent_escalation": 0.5, "de_escalation": 0.6}),
    "de-escalation": (309, 52, {"posturing": 0.25, "non_violent_escalation": 0.5, "de_escalation": 1.0}),
}

# Pinned entries: label -> [(nation, day, entries, score)].
PINNED = {
    "baseline": [
        ("Purple", 11, ["occupy_border_city:Pink"], 28),
        ("Blue", 13, ["execute_targeted_attack:Yellow"], 28),
        # One nuclear strike, paired with two peace overtures: 60 - 2 - 2.
        ("Red", 14, ["execute_nuclear_strike:Blue", "start_peace_negotiations:Purple",
                     "start_peace_negotiations:Green"], 56),
    ],
    "context": [("Red", 12, ["execute_targeted_attack:Orange"], 28)],
}

PRIVATE_THOUGHTS = "Weigh each option against the risk of a wider conflict before acting."


def load_actions():
    data = tomllib.loads((ROOT / "configs" / "taxonomy.toml").read_text())
    return data["actions"]


def split(total, keys, weights):
    """Largest-remainder split of an integer total by weight."""
    w = sum(weights[k] for k in keys)
    raw = {k: total * weights[k] / w for k in keys}
    out = {k: int(raw[k]) for k in keys}
    rest = total - sum(out.values())
    for k in sorted(keys, key=lambda k: (out[k] - raw[k], keys.index(k)))[:rest]:
        out[k] += 1
    return out


def ramp(total, days):
    """Nondecreasing integer day totals summing to `total`."""
    weights = {d: d + 5 for d in range(1, days + 1)}
    parts = split(total, list(weights), weights)
    return [parts[d] for d in range(1, days + 1)]


def combos_by_value(actions):
    out = {}
    for n in range(1, MAX_COMBO + 1):
        for combo in itertools.combinations_with_replacement(actions, n):
            out.setdefault(sum(a["score"] for a in combo), []).append(combo)
    return out


def pick(combos, value, prefs, rng):
    options = combos[value]
    weights = []
    for combo in options:
        w = 1.0
        for a in combo:
            w *= prefs.get(a["category"], 0.05)
        weights.append(w / len(combo))
    return rng.choices(options, weights=weights)[0]


def entry(action, nation, rng):
    if action["requires_target"]:
        target = rng.choice([n for n in NATIONS if n != nation])
        return f"{action['id']}:{target}"
    return action["id"]


def build(label, total, day14, prefs, combos, rng):
    days = ramp(total - day14, DAYS - 1) + [day14]
    table = {n: {} for n in NATIONS}
    for d, day_total in enumerate(days, start=1):
        keys = list(NATIONS)
        for nation, day, entries, score in PINNED.get(label, []):
            if day == d:
                table[nation][d] = entries
                keys.remove(nation)
                day_total -= score
        for nation, value in split(day_total, keys, WEIGHTS).items():
            table[nation][d] = [entry(a, nation, rng) for a in pick(combos, value, prefs, rng)]
    return table


def render(label, total, day14, table):
    lines = [
        f"# Fixture script `{label}`: escalation total {total} over 8 nations x 14 days,",
        f"# day-14 total {day14}. Generated by scripts/gen_fixture_scripts.py.",
        'default = ["wait"]',
        f'private_thoughts = "{PRIVATE_THOUGHTS}"',
    ]
    for nation in NATIONS:
        lines.append("")
        lines.append(f"[nations.{nation}.days]")
        for d in range(1, DAYS + 1):
            items = ", ".join(f'"{e}"' for e in table[nation][d])
            lines.append(f"{d} = [{items}]")
    return "\n".join(lines) + "\n"


def check(text, actions, total, day14):
    scores = {a["id"]: a["score"] for a in actions}
    data = tomllib.loads(text)
    got_total = got_14 = 0
    for script in data["nations"].values():
        for day, entries in script["days"].items():
            s = sum(scores[e.split(":")[0]] for e in entries)
            got_total += s
            if day == str(DAYS):
                got_14 += s
    assert (got_total, got_14) == (total, day14), (got_total, got_14)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=ROOT / "configs" / "scripts")
    args = parser.parse_args()
    actions = load_actions()
    combos = combos_by_value([a for a in actions if a["category"] != "nuclear"])
    args.out.mkdir(parents=True, exist_ok=True)
    for i, (label, (total, day14, prefs)) in enumerate(TREATMENTS.items()):
        rng = random.Random(1000 + i)
        text = render(label, total, day14, build(label, total, day14, prefs, combos, rng))
        check(text, actions, total, day14)
        (args.out / f"{label}.toml").write_text(text)
        print(f"{label}: total {total} mean {total / 112:.2f} day14 {day14 / 8:.2f}")


if __name__ == "__main__":
    main()
