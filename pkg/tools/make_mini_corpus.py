"""Regenerate the synthetic mini-corpus bundled under src/conflictcast/data/mini.

Everything here is fabricated: country names are real, events and articles are not.
Run from the repository root: ``python tools/make_mini_corpus.py``.
"""

from __future__ import annotations

import csv
import json
import random
import shutil
from datetime import date, timedelta
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "conflictcast" / "data" / "mini"
RNG = random.Random(20230101)

MONTHS = [date(2022, 7, 1)]
while MONTHS[-1] < date(2023, 8, 1):
    m = MONTHS[-1]
    MONTHS.append(date(m.year + m.month // 12, m.month % 12 + 1, 1))

PROFILES = {
    # monthly fatalities 2022-07 .. 2023-08
    "Ethiopia": [420, 380, 450, 520, 300, 150, 120, 110, 90, 140, 200, 260, 300, 280],
    "Sudan": [40, 35, 50, 45, 30, 38, 42, 40, 60, 900, 1100, 1300, 1250, 1200],
    "Somalia": [250, 270, 260, 240, 300, 280, 260, 250, 270, 260, 240, 250, 255, 245],
    "Kenya": [10, 12, 8, 9, 11, 7, 10, 9, 12, 8, 10, 11, 9, 10],
}
CODES = {"Ethiopia": "ETH", "Sudan": "SDN", "Somalia": "SOM"}
PLACES = {
    "Ethiopia": (["Addis Ababa", "Mekelle", "Bahir Dar", "Gondar", "Dessie"],
                 ["federal forces", "Fano militia", "regional special forces", "TPLF fighters"]),
    "Sudan": (["Khartoum", "Omdurman", "El Geneina", "Nyala", "Port Sudan"],
              ["the Sudanese Armed Forces", "the Rapid Support Forces", "armed tribal groups", "protesters"]),
    "Somalia": (["Mogadishu", "Baidoa", "Kismayo", "Beledweyne", "Galkayo"],
                ["al-Shabaab militants", "Somali National Army units", "clan militias", "AU peacekeepers"]),
}
TONE = {
    "Ethiopia": [-6.5, -6.0, -6.8, -7.2, -3.0, -2.5, -2.8, -3.1, -3.5, -4.2, -5.0, -5.6, -5.9, -5.7],
    "Sudan": [-2.5, -2.4, -2.9, -2.6, -2.2, -2.7, -2.9, -3.0, -3.4, -8.5, -8.8, -9.1, -8.9, -8.7],
    "Somalia": [-5.5, -5.8, -5.6, -5.4, -6.0, -5.9, -5.7, -5.5, -5.8, -5.6, -5.4, -5.5, -5.6, -5.5],
}
GOLDSTEIN = {
    "Ethiopia": [-7.0, -6.5, -7.5, -8.0, 3.0, 2.0, 1.0, 0.5, -1.0, -3.0, -5.0, -6.0, -6.5, -6.0],
    "Sudan": [-2.0, -1.5, -2.5, -2.0, -1.0, -2.0, -2.0, -2.5, -3.0, -9.0, -9.5, -9.5, -9.0, -9.0],
    "Somalia": [-6.0, -6.5, -6.0, -5.5, -7.0, -6.5, -6.0, -6.0, -6.5, -6.0, -5.5, -6.0, -6.0, -5.8],
}
# distinct figures keep every article sentence unique
NUMBERS = iter(RNG.sample(range(12, 3000), 1000))
FIRST_GDELT_MONTH = 3  # 2022-10; RAG context for the first target needs three prior months


def month_days(m: date) -> int:
    nxt = date(m.year + m.month // 12, m.month % 12 + 1, 1)
    return (nxt - m).days


def split_total(total: int, parts: int) -> list[int]:
    cuts = sorted(RNG.randint(0, total) for _ in range(parts - 1))
    return [b - a for a, b in zip([0, *cuts], [*cuts, total])]


def write_acled() -> None:
    rows = []
    for country, series in PROFILES.items():
        for m, total in zip(MONTHS, series):
            n = RNG.randint(3, 6)
            for part in split_total(total, n):
                day = m + timedelta(days=RNG.randrange(month_days(m)))
                rows.append((day.isoformat(), country, part))
    rows.sort()
    with open(OUT / "acled.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id_cnty", "event_date", "event_type", "country", "admin1", "fatalities"])
        for i, (d, c, f) in enumerate(rows, start=1):
            w.writerow([f"MINI{i:05d}", d, "Battles", c, "", f])
        # deliberately malformed and out-of-scope rows
        w.writerow(["MINI99998", "2023-03-03", "Battles", "Sudan", "", -3])
        w.writerow(["MINI99999", "2023-03-04", "Battles", "Congo, DRC", "North Kivu", 4])


def sentence_bank(country: str, day: date, idx: int) -> list[str]:
    cities, actors = PLACES[country]
    city = cities[idx % len(cities)]
    other = cities[(idx + 2) % len(cities)]
    a1, a2 = actors[idx % len(actors)], actors[(idx + 1) % len(actors)]
    n = [next(NUMBERS) for _ in range(9)]
    return [
        f"{city.upper()} ({day.isoformat()}) - Clashes between {a1} and {a2} were reported near {city} this week.",
        f"Local officials said the fighting displaced about {n[0] * 10} families toward {other}.",
        f"Humanitarian agencies warned that {n[1]} aid workers could not reach {city} because of checkpoints.",
        f"Residents of {city} described intermittent gunfire and said {n[2]} shops in the main market had closed.",
        f"A spokesperson for {a2} denied responsibility for an attack that killed {n[3] % 40 + 2} civilians around {other} ({n[3]} displaced).",
        f"Observers counted {n[4]} reported incidents in {country} over the period, a change from previous weeks.",
        f"Aid convoys carrying {n[5]} tonnes of supplies to {other} were delayed, according to relief workers.",
        f"Diplomats urged both sides to return to talks and to allow {n[6]} wounded people to be evacuated.",
        f"Health workers in {city} reported treating {n[7]} patients while short of medicine and fuel.",
        f"Analysts surveyed by {n[8]} local groups said the coming weeks would show whether mediation efforts could hold in {country}.",
    ]


def page_html(title: str, paragraphs: list[str]) -> str:
    body = "\n".join(f"    <p>{p}</p>" for p in paragraphs)
    return f"""<!doctype html>
<html>
<head>
  <title>{title}</title>
  <script>window.dataLayer = window.dataLayer || []; function track(e) {{ dataLayer.push(e); }}</script>
  <style>body {{ font-family: serif; }} .ad {{ display: none; }}</style>
</head>
<body>
  <nav>Home | World | Africa | Subscribe</nav>
  <article>
    <h1>{title}</h1>
{body}
  </article>
  <aside class="ad">Advertisement</aside>
  <footer>Copyright Mini Wire Service</footer>
</body>
</html>
"""


def gdelt_row(event_id: int, day: date, code: str, goldstein: float, tone: float, url: str) -> str:
    cols = [""] * 61
    cols[0] = str(event_id)
    cols[1] = day.strftime("%Y%m%d")
    cols[2] = day.strftime("%Y%m")
    cols[3] = str(day.year)
    cols[7] = code
    cols[17] = code if event_id % 3 == 0 else ""
    cols[26] = "190"
    cols[29] = "4"
    cols[30] = f"{goldstein:.1f}"
    cols[34] = f"{tone:.6f}"
    cols[59] = day.strftime("%Y%m%d") + "000000"
    cols[60] = url
    return "\t".join(cols)


def write_gdelt_and_pages() -> None:
    pages = OUT / "pages"
    pages.mkdir(parents=True, exist_ok=True)
    index = {}
    rows = []
    seen: set[str] = set()
    eid = 1000
    n_articles = 0
    for country, code in CODES.items():
        for mi in range(FIRST_GDELT_MONTH, len(MONTHS)):
            m = MONTHS[mi]
            per_month = 2 if mi in (5, 9) else 1
            for j in range(per_month):
                n_articles += 1
                # the last article of each country sits on a month boundary and is cited again the next day
                day = m + timedelta(days=month_days(m) - 1) if (mi == 8 and j == 0) else \
                    m + timedelta(days=RNG.randrange(3, 26))
                slug = f"{country.lower()}-{day.isoformat()}-{j}"
                url = f"https://news.example.org/{country.lower()}/{slug}"
                bank = sentence_bank(country, day, n_articles)
                n_par = RNG.choice([2, 3, 5])
                paras = []
                for p in range(n_par):
                    start = (p * 2) % len(bank)
                    paras.append(" ".join(bank[start:start + 2 + (p % 2)]))
                for sentence in bank:
                    # the leakage audit matches verbatim sentences, so they must not repeat across articles
                    assert sentence not in seen, sentence
                    seen.add(sentence)
                title = f"{country}: fighting reported near {PLACES[country][0][n_articles % 5]}"
                fname = f"{slug}.html"
                (pages / fname).write_text(page_html(title, paras), encoding="utf-8")
                index[url] = fname
                tone, gold = TONE[country][mi], GOLDSTEIN[country][mi]
                cites = [day, day + timedelta(days=1)]
                for k, d in enumerate(cites):
                    eid += 1
                    jitter = RNG.uniform(-0.8, 0.8)
                    rows.append(gdelt_row(eid, d, code, max(-10, min(10, gold + jitter / 2)), tone + jitter, url))
                # an uncited event with no URL
                eid += 1
                rows.append(gdelt_row(eid, day, code, gold, tone, ""))
    # a cited URL whose page is gone
    eid += 1
    rows.append(gdelt_row(eid, date(2023, 3, 10), "SOM", -6.0, -5.0, "https://news.example.org/somalia/removed-story"))
    # malformed rows
    bad = gdelt_row(eid + 1, date(2023, 3, 11), "SDN", 0.0, -3.0, "https://news.example.org/x").split("\t")
    bad[30] = "11.0"
    rows.append("\t".join(bad))
    bad = gdelt_row(eid + 2, date(2023, 3, 12), "SDN", 0.0, -3.0, "https://news.example.org/y").split("\t")
    bad[1] = "2023XX12"
    rows.append("\t".join(bad))
    rows.sort(key=lambda r: r.split("\t")[1])
    (OUT / "gdelt").mkdir(exist_ok=True)
    (OUT / "gdelt" / "20221001-20230831.export.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (pages / "pages.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{n_articles} articles, {len(rows)} GDELT rows")


MOCK_SCRIPT = {
    "rules": [
        {"country": "Somalia", "month": "2023-04", "experiment": "parametric",
         "reply": "I am unable to provide a reliable outlook for this period."},
        {"country": "Sudan", "month": "2023-05", "experiment": "rag",
         "reply": "**TREND:** Escalate\n**FATALITIES:** 900 to 1,400"},
        {"country": "Ethiopia", "month": "2023-02", "experiment": "*",
         "reply": "Given the recent agreement I expect de-escalation, with roughly 100-150 deaths."},
    ],
    "default": {
        "labels": ["Escalate", "De-escalate", "Peace/No Conflict", "Stable Conflict"],
        "fatalities": [0, 1500],
        "range_probability": 0.5,
        "summary": "Reports describe continued clashes and displacement.",
    },
}

CONFIG = """\
# Synthetic offline corpus: 3 countries x 8 months, scripted mock replies.
run_id: mini
countries: [Ethiopia, Sudan, Somalia]
date_range: ["2023-01", "2023-08"]
experiment: both
seed: 7
parallelism: 4
paths:
  data_dir: .
  runs_dir: runs
inputs:
  gdelt: ["gdelt/*.tsv"]
  acled: acled.csv
  pages_dir: pages
  history_months: 6
provider:
  kind: mock
  model_id: mock-gpt
  mock_script: mock_script.json
cache:
  mode: "off"
  dir: cache
retrieval:
  summarize_with_llm: false
fetch:
  politeness_ms: 0
"""


def main() -> None:
    if OUT.exists():
        shutil.rmtree(OUT)
    OUT.mkdir(parents=True)
    write_acled()
    write_gdelt_and_pages()
    (OUT / "mock_script.json").write_text(json.dumps(MOCK_SCRIPT, indent=1) + "\n", encoding="utf-8")
    (OUT / "config.yaml").write_text(CONFIG, encoding="utf-8")


if __name__ == "__main__":
    main()
