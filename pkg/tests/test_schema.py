from dataclasses import replace

import pytest
from hypothesis import given, settings

from gridsel.classad import Literal, evaluate, match_ads, parse_classad
from gridsel.schema import (
    BandwidthRecord,
    DirectoryName,
    LdifError,
    SourceBandwidthRecord,
    VolumeRecord,
    bandwidth_dn,
    dump_ldif,
    format_number,
    from_ldif,
    load_ldif,
    parse_number,
    peer_host,
    record_to_classad,
    source_dn,
    to_ldif,
    validate,
    volume_dn,
    with_identity,
)
from strategies import bandwidth_records, directory_names, record_sets, source_records, volume_records

POLICY = "other.reqdSpace < 10G && other.reqdRDBandwidth < 75K/Sec"

HUGO = VolumeRecord(
    hostname="hugo.mcs.anl.gov",
    volume="/dev/sandbox",
    total_space=100 * 2**30,
    available_space=50 * 2**30,
    mount_point="/sandbox",
    disk_transfer_rate=40 * 2**20,
    drd_time=0.008,
    dwr_time=0.01,
    requirements=POLICY,
)
HUGO_DN = volume_dn("hugo.mcs.anl.gov", "/dev/sandbox", "MCS", "ANL")
HUGO_BW = BandwidthRecord(max_rd_bandwidth=76800, min_rd_bandwidth=76800, avg_rd_bandwidth=76800,
                          stddev_rd_bandwidth=0)

STORAGE_AD = parse_classad(f"""
hostname = "hugo.mcs.anl.gov";
volume = "/dev/sandbox";
availableSpace = 50G;
MaxRDBandwidth = 75K/Sec;
requirement = {POLICY};
""")

APP_AD = parse_classad("""
hostname = "comet.xyz.com";
reqdSpace = 5G;
reqdRDBandwidth = 50K/Sec;
rank = other.availableSpace;
requirement = other.availableSpace > 5G && other.MaxRDBandwidth > 50K/Sec;
""")


# -- validation ----------------------------------------------------------------


def test_full_volume_record_is_valid():
    assert validate(HUGO) == []


def test_missing_disk_transfer_rate():
    violations = validate(replace(HUGO, disk_transfer_rate=None))
    assert [v.attribute for v in violations] == ["diskTransferRate"]


def test_available_exceeds_total():
    violations = validate(replace(HUGO, available_space=HUGO.total_space + 1))
    assert len(violations) == 1
    assert violations[0].attribute == "availableSpace"


@pytest.mark.parametrize(
    "changes, attribute",
    [
        ({"disk_transfer_rate": 0}, "diskTransferRate"),
        ({"drd_time": -1}, "drdTime"),
        ({"total_space": "big"}, "totalSpace"),
        ({"total_space": float("inf")}, "totalSpace"),
        ({"hostname": " padded"}, "hostname"),
        ({"mount_point": "two\nlines"}, "mountPoint"),
        ({"requirements": "other.x <"}, "requirements"),
        ({"total_space": True}, "totalSpace"),
    ],
)
def test_volume_violations(changes, attribute):
    violations = validate(replace(HUGO, **changes))
    assert attribute in {v.attribute for v in violations}


def test_requirements_optional():
    assert validate(replace(HUGO, requirements=None)) == []


def test_bandwidth_ordering_invariant():
    bad = replace(HUGO_BW, min_rd_bandwidth=80000)
    assert [v.attribute for v in validate(bad)] == ["AvgRDBandwidth"]
    assert validate(BandwidthRecord()) != []
    incomplete = BandwidthRecord(max_rd_bandwidth=1)
    assert validate(incomplete) != []
    assert validate(incomplete, partial=True) == []


def test_source_pairs():
    ok = SourceBandwidthRecord(source_url="comet.xyz.com", last_rd_bandwidth=76800,
                               last_rd_url="gsiftp://comet.xyz.com/f")
    assert validate(ok) == []
    assert [v.attribute for v in validate(replace(ok, last_rd_url=None))] == ["lastRDurl"]
    assert validate(replace(ok, last_rd_bandwidth=-1)) != []


def test_kind_mismatch_reported():
    assert validate(HUGO, kind="bandwidth")[0].attribute == "objectclass"


# -- LDIF ------------------------------------------------------------------------


def test_hugo_ldif_layout():
    text = to_ldif(HUGO, HUGO_DN)
    lines = text.split("\n")
    assert lines[0] == r"dn: gss=/dev/sandbox,gss=hugo.mcs.anl.gov,ou=MCS,o=ANL"
    assert lines[1] == "objectclass: top"
    assert lines[2] == "objectclass: GridStorageServerVolume"
    assert "availablespace: 53687091200" in lines
    assert "drdtime: 0.008" in lines
    assert f"requirements: {POLICY}" in lines
    assert text.endswith("\n\n") and not text.endswith("\n\n\n")


def test_ldif_round_trip_identity():
    assert from_ldif(to_ldif(HUGO, HUGO_DN)) == (HUGO, HUGO_DN)


def test_from_ldif_tolerates_order_and_case():
    text = (
        "dn: gss=v,gss=h\nobjectClass: GridStorageServerVolume\nAVAILABLESPACE: 5\n"
        "hostname: h\nvolume: v\ntotalspace: 10\nmountpoint: /m\ndisktransferrate: 1.5\n"
        "drdtime: 0\ndwrtime: 0\nfilesystem: ext4\nfilesystem: xfs\nxnote: kept\n"
    )
    record, dn = from_ldif(text)
    assert record.available_space == 5 and record.total_space == 10
    assert record.filesystem == ("ext4", "xfs")
    assert record.extras == {"xnote": ("kept",)}
    assert dn == DirectoryName((("gss", "v"), ("gss", "h")))
    assert validate(record) == []


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "missing dn"),
        ("hostname: h\n", "missing dn"),
        ("dn: gss=h\nobjectclass: GridStorageServerVolume\nno separator\n", "malformed"),
        ("dn: gss=h\nobjectclass: GridStorageServerVolume\ntotalspace: lots\n", "unparseable numeric"),
        ("dn: gss=h\nobjectclass: Other\n", "objectclass"),
        ("dn: gss=h\nobjectclass: GridStorageServerVolume\nhostname: a\nhostname: b\n", "duplicate"),
    ],
)
def test_from_ldif_errors(text, message):
    with pytest.raises(LdifError, match=message):
        from_ldif(text)


def test_to_ldif_rejects_invalid():
    with pytest.raises(LdifError, match="invalid record"):
        to_ldif(replace(HUGO, hostname=None), HUGO_DN)


@pytest.mark.parametrize("value, text", [(53687091200, "53687091200"), (2.0, "2"), (0.1, "0.1"),
                                         (2.0**60, "1.152921504606847e+18"), (-0.0, "0"), (1e-7, "1e-07")])
def test_number_format(value, text):
    assert format_number(value) == text
    assert parse_number(text) == value


def test_subtree_dump_and_load():
    src = SourceBandwidthRecord(source_url="comet.xyz.com", last_rd_bandwidth=76800,
                                last_rd_url="gsiftp://comet.xyz.com/higgs.dat")
    bdn = bandwidth_dn(HUGO_DN)
    entries = [(HUGO, HUGO_DN), (HUGO_BW, bdn), (src, source_dn(bdn, src.source_url))]
    text = dump_ldif(entries)
    assert load_ldif(text) == entries
    assert load_ldif("version: 1\n# comment\n" + text) == entries
    assert str(bdn) == "gss=TransferBandwidth," + str(HUGO_DN)


def _normalize(record):
    # integral floats print as integers, so they come back as int
    numeric = {k: (int(v) if isinstance(v, float) and v.is_integer() and abs(v) < 2**53 else v)
               for k, v in vars(record).items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
    return replace(record, **numeric)


@settings(max_examples=500)
@given(record_sets())
def test_ldif_round_trip_property(entries):
    for record, _ in entries:
        assert validate(record) == []
    text = dump_ldif(entries)
    loaded = load_ldif(text)
    assert loaded == [(_normalize(r), dn) for r, dn in entries]
    assert dump_ldif(loaded) == text


@given(directory_names)
def test_directory_name_round_trip(dn):
    assert DirectoryName.parse(str(dn)) == dn


def test_directory_name_escaping():
    dn = volume_dn("h,1", "a=b\\c")
    assert str(dn) == r"gss=a\=b\\c,gss=h\,1"
    assert DirectoryName.parse(str(dn)).leaf == "a=b\\c"
    assert dn.parent.leaf == "h,1"
    with pytest.raises(ValueError):
        DirectoryName.parse("cn=x")
    with pytest.raises(ValueError):
        DirectoryName(())


# -- conversion ------------------------------------------------------------------


def test_conversion_reproduces_storage_ad():
    ad = record_to_classad(HUGO, HUGO_BW)
    for name in STORAGE_AD:
        assert ad[name] == STORAGE_AD[name], name


def test_conversion_without_policy_is_always_willing():
    ad = record_to_classad(replace(HUGO, requirements=None))
    assert ad.requirement is None
    assert "requirement" not in ad


def test_conversion_then_match_agrees_with_direct():
    ad = record_to_classad(HUGO, HUGO_BW)
    assert match_ads(APP_AD, ad).matched
    assert match_ads(APP_AD, ad).matched == match_ads(APP_AD, STORAGE_AD).matched


def test_per_source_flattening():
    sources = [
        SourceBandwidthRecord(source_url="gsiftp://a.org/x", last_rd_bandwidth=1, last_rd_url="u"),
        SourceBandwidthRecord(source_url="comet.xyz.com", last_rd_bandwidth=2, last_rd_url="u",
                              last_wr_bandwidth=3, last_wr_url="w"),
    ]
    ad = record_to_classad(HUGO, HUGO_BW, sources, requester="comet.xyz.com")
    assert ad["lastRDBandwidth_from_0"] == Literal(1)
    assert ad["lastWRBandwidth_from_1"] == Literal(3)
    assert ad["sourceUrl_from_0"] == Literal("gsiftp://a.org/x")
    assert ad["lastRDBandwidth"] == Literal(2)
    assert "lastRDBandwidth" not in record_to_classad(HUGO, HUGO_BW, sources)


@settings(max_examples=200)
@given(volume_records(), bandwidth_records(), source_records())
def test_conversion_faithful_numbers(vol, bw, src):
    ad = record_to_classad(vol, bw, [src], requester=src.source_url)
    pairs = [("totalSpace", vol.total_space), ("availableSpace", vol.available_space),
             ("diskTransferRate", vol.disk_transfer_rate), ("MaxRDBandwidth", bw.max_rd_bandwidth),
             ("AvgWRBandwidth", bw.avg_wr_bandwidth), ("lastRDBandwidth", src.last_rd_bandwidth)]
    for name, value in pairs:
        if value is None:
            assert name not in ad
        else:
            assert evaluate(ad[name]) == value


def test_with_identity_and_peer_host():
    bare = VolumeRecord(available_space=1)
    filled = with_identity(bare, HUGO_DN)
    assert (filled.hostname, filled.volume) == ("hugo.mcs.anl.gov", "/dev/sandbox")
    assert peer_host("gsiftp://Comet.xyz.com:2811/data/f") == "comet.xyz.com"
    assert peer_host("comet.xyz.com") == "comet.xyz.com"
