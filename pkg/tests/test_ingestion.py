import gzip
import io
import zipfile
from datetime import date, datetime, timezone

import pytest

from conflictcast.errors import ColumnMapIncomplete, EmptyBody, FetchFailed, MissingHeader, UnreadableStream
from conflictcast.ingestion import (
    AcledEvent,
    Article,
    ExtractionConfig,
    GdeltEvent,
    LocalPageClient,
    corpus_checksum,
    country_code,
    extract_text,
    fetch_article,
    fetch_articles,
    filter_events,
    parse_acled_csv,
    parse_gdelt_export,
    read_corpus,
    write_corpus,
)


def gdelt_line(sqldate="20230415", a1="SDN", a2="", goldstein="-7.0", tone="-4.5", url="https://n.example/a"):
    cols = [""] * 61
    cols[1], cols[7], cols[17], cols[30], cols[34], cols[60] = sqldate, a1, a2, goldstein, tone, url
    return "\t".join(cols)


def test_gdelt_parse_fields():
    data = "\n".join([gdelt_line(), "", gdelt_line(a1="", a2="ETH", url="")]).encode()
    parsed = parse_gdelt_export(data)
    assert parsed.rejects.count == 0
    ev = parsed.records[0]
    assert ev == GdeltEvent(date(2023, 4, 15), "SDN", None, -7.0, -4.5, "https://n.example/a")
    assert parsed.records[1].actor2_country == "ETH" and parsed.records[1].source_url is None


def test_gdelt_rejects_are_counted_not_clamped():
    data = "\n".join([gdelt_line(), gdelt_line(goldstein="11.0"), gdelt_line(tone="-120"),
                      gdelt_line(sqldate="2023XX01"), "short\trow", gdelt_line(goldstein="abc")]).encode()
    parsed = parse_gdelt_export(data)
    assert len(parsed.records) == 1
    assert parsed.rejects.count == 5
    assert parsed.rejects.lines == [2, 3, 4, 5, 6]
    assert parsed.rejects.reasons["goldstein out of range"] == 1
    assert "5 rejected rows" in parsed.rejects.summary()


def test_gdelt_compressed_inputs():
    raw = (gdelt_line() + "\n").encode()
    assert len(parse_gdelt_export(gzip.compress(raw)).records) == 1
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("20230415.export.CSV", raw)
    assert len(parse_gdelt_export(io.BytesIO(buf.getvalue())).records) == 1
    with pytest.raises(UnreadableStream):
        parse_gdelt_export(b"\x1f\x8bnot really gzip")


def test_gdelt_column_map():
    with pytest.raises(ColumnMapIncomplete):
        parse_gdelt_export(b"", {"AvgTone": None})
    cols = ["20230101", "ISR", "", "2.5", "1.0", "https://u"]
    cmap = {"SQLDATE": 0, "Actor1CountryCode": 1, "Actor2CountryCode": 2, "GoldsteinScale": 3, "AvgTone": 4,
            "SOURCEURL": 5}
    ev = parse_gdelt_export("\t".join(cols).encode(), cmap).records[0]
    assert ev.actor1_country == "ISR" and ev.goldstein == 2.5


ACLED = "\ufeff" + """event_id_cnty,event_date,country,admin1,fatalities
A1,2023-04-15,Sudan,Khartoum,12
A2,15 April 2023,Sudan,,3
A3,2023-04-16,"Congo, DRC",North Kivu,4
A4,2023-04-17,Sudan,,-2
A5,not a date,Sudan,,1
A6,2023-04-18,Sudan,,1.5

"""


def test_acled_parse():
    parsed = parse_acled_csv(ACLED.encode("utf-8"))
    assert [e.fatalities for e in parsed.records] == [12, 3, 4]
    assert parsed.records[2].country == "Congo, DRC"
    assert parsed.records[1].event_date == date(2023, 4, 15)
    assert parsed.rejects.count == 3
    assert sorted(parsed.rejects.reasons) == ["bad date", "bad fatalities", "negative fatalities"]


def test_acled_header_required():
    with pytest.raises(MissingHeader):
        parse_acled_csv(b"date,country,deaths\n2023-01-01,Sudan,1\n")
    with pytest.raises(MissingHeader):
        parse_acled_csv(b"")


PAGE = """<html><head><title>Clashes  in Khartoum</title><script>var x = "<p>nope</p>";</script>
<style>p { color: red }</style></head>
<body><nav>Home | World</nav><article><h1>Clashes</h1>
<p>KHARTOUM (2023-04-15) - Fighting   erupted&nbsp;near the airport.</p>
<p>Residents fled <b>south</b> &amp; east.</p></article>
<footer>Copyright</footer></body></html>"""


def test_extract_text_drops_boilerplate():
    title, body = extract_text(PAGE)
    assert title == "Clashes in Khartoum"
    assert body == "KHARTOUM (2023-04-15) - Fighting erupted near the airport.\nResidents fled south & east."
    assert "nope" not in body and "Home" not in body and "Copyright" not in body


def test_extract_text_without_paragraphs():
    _, body = extract_text("<div>First block</div><div>Second <span>block</span></div>")
    assert body == "First block\nSecond block"


class StubClient:
    def __init__(self, pages):
        self.pages = pages

    def get(self, url, timeout=None, headers=None):
        status, text = self.pages.get(url, (404, ""))
        if status is None:
            raise TimeoutError("slow")
        return type("R", (), {"status_code": status, "text": text})()


def test_fetch_article_outcomes():
    client = StubClient({"https://a/ok": (200, PAGE), "https://a/500": (500, ""), "https://a/slow": (None, "")})
    art = fetch_article("https://a/ok", client, ExtractionConfig(min_chars=20))
    assert art.title == "Clashes in Khartoum" and art.body.startswith("KHARTOUM")
    with pytest.raises(EmptyBody):
        fetch_article("https://a/ok", client, ExtractionConfig(min_chars=10_000))
    with pytest.raises(FetchFailed):
        fetch_article("https://a/500", client)
    with pytest.raises(FetchFailed):
        fetch_article("https://a/slow", client)
    with pytest.raises(FetchFailed):
        fetch_article("ftp://a/x", client)


def test_fetch_articles_collects_failures():
    client = StubClient({"https://a/ok": (200, PAGE)})
    urls = {"https://a/ok": [date(2023, 4, 16), date(2023, 4, 15)], "https://a/gone": [date(2023, 4, 1)]}
    arts, failures = fetch_articles(urls, client, ExtractionConfig(min_chars=20), concurrency=2, politeness_ms=0)
    assert [a.url for a in arts] == ["https://a/ok"]
    assert arts[0].origin_event_dates == [date(2023, 4, 15), date(2023, 4, 16)]
    assert list(failures) == ["https://a/gone"]


def test_local_page_client(mini_dir):
    client = LocalPageClient(mini_dir / "pages")
    url = next(iter(client.index))
    assert client.get(url).status_code == 200
    assert client.get("https://nowhere/x").status_code == 404


def test_country_filtering():
    assert country_code("sudan") == "SDN" and country_code("XYZ") == "XYZ"
    assert country_code("Atlantis") is None
    g = [GdeltEvent(date(2023, 4, 1), "ETH", "SDN", 0, 0, None), GdeltEvent(date(2023, 4, 1), "ETH", None, 0, 0, None),
         GdeltEvent(date(2023, 6, 1), "SDN", None, 0, 0, None)]
    a = [AcledEvent(date(2023, 4, 2), "sudan ", 1), AcledEvent(date(2023, 4, 2), "South Sudan", 1)]
    window = (date(2023, 4, 1), date(2023, 4, 30))
    assert filter_events(g, "Sudan", window) == [g[0]]
    assert filter_events(a, "Sudan", window) == [a[0]]
    assert filter_events(g, "Atlantis", window, {"Atlantis": "ETH"}) == g[:2]
    with pytest.raises(ValueError):
        filter_events(g, "Sudan", (date(2023, 5, 1), date(2023, 4, 1)))


def test_corpus_roundtrip_and_checksum(tmp_path):
    events = [GdeltEvent(date(2023, 4, 1), "SDN", None, -2.0, -3.25, "https://u"),
              AcledEvent(date(2023, 4, 2), "Sudan", 7)]
    art = Article("https://u", datetime(2024, 1, 1, tzinfo=timezone.utc), "T", "Body text.", [date(2023, 4, 1)])
    m1 = write_corpus(tmp_path / "c", events, [art], "Sudan", (date(2023, 1, 1), date(2023, 4, 30)))
    ev2, arts2 = read_corpus(tmp_path / "c")
    assert ev2 == events and arts2 == [art]
    later = Article(art.url, datetime(2025, 6, 1, tzinfo=timezone.utc), art.title, art.body, art.origin_event_dates)
    assert corpus_checksum(events, [later]) == m1.checksum
    edited = Article(art.url, art.fetched_at, art.title, art.body + "!", art.origin_event_dates)
    assert corpus_checksum(events, [edited]) != m1.checksum
