"""
Tests for record types, Lv2 field rules and date helpers.
"""

from datetime import date, timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stagex.etl.errors import InvariantViolation
from stagex.etl.records import (
    OperationCode,
    StagingRecord,
    parse_bk,
    parse_date,
    previous_day,
)


@given(st.dates(min_value=date(1900, 1, 2), max_value=date(2999, 12, 31)))
def test_previous_day_is_calendar_correct(day):
    as_int = int(day.strftime("%Y%m%d"))
    assert previous_day(as_int) == int((day - timedelta(days=1)).strftime("%Y%m%d"))


def test_previous_day_edges():
    assert previous_day(20141008) == 20141007
    assert previous_day(20140301) == 20140228
    assert previous_day(20160301) == 20160229
    assert previous_day(20150101) == 20141231


def test_parse_date():
    assert parse_date("20141008") == 20141008
    assert parse_date(99991231) == 99991231
    for bad in ("2014108", "20141301", "20140230", "abcdefgh", ""):
        with pytest.raises(ValueError):
            parse_date(bad)


def test_parse_composite_fk_value():
    assert parse_bk("A|7", 2) == ("A", "7")
    assert parse_bk("A|7", 1) == ("A|7",)
    with pytest.raises(ValueError):
        parse_bk("A", 2)


@pytest.mark.parametrize("rec", [
    StagingRecord(op=OperationCode.BEGIN, sk=1, bk=("a",), new_bd=20141008),
    StagingRecord(op=OperationCode.END_BEGIN, sk=1, bk=("a",), sor_bd=20141007, ed=20141007, new_bd=20141008),
    StagingRecord(op=OperationCode.END, sk=1, bk=("a",), sor_bd=20141001, ed=20141007),
    StagingRecord(op=OperationCode.END, sk=1, bk=("a",), ed=20141007),
    StagingRecord(op=OperationCode.DEACTIVATE_AUGMENT, sk=1, bk=("a",), new_bd=20141008),
    StagingRecord(op=OperationCode.AUGMENT, sk=1, bk=("a",), af=True),
])
def test_valid_lv2_rows(rec):
    rec.check()


@pytest.mark.parametrize("rec", [
    StagingRecord(op=OperationCode.BEGIN, sk=0, bk=("a",), new_bd=20141008),
    StagingRecord(op=OperationCode.BEGIN, sk=1, bk=("a",)),
    StagingRecord(op=OperationCode.END_BEGIN, sk=1, bk=("a",), sor_bd=20141001, ed=20141008, new_bd=20141008),
    StagingRecord(op=OperationCode.END_BEGIN, sk=1, bk=("a",), ed=20141007, new_bd=20141008),
    StagingRecord(op=OperationCode.END, sk=1, bk=("a",), ed=20141007, new_bd=20141008),
    StagingRecord(op=OperationCode.AUGMENT, sk=1, bk=("a",), af=False),
    StagingRecord(op=OperationCode.AUGMENT, sk=1, bk=("a",), af=True, data={"x": "1"}),
])
def test_invalid_lv2_rows(rec):
    with pytest.raises(InvariantViolation):
        rec.check()


def test_merge_keeps_non_blank_values():
    stored = StagingRecord(op=OperationCode.BEGIN, sk=4, bk=("a",), new_bd=20141008,
                           data={"name": "n", "phone": "1"}, fk_values={"region": "R1"})
    incoming = StagingRecord(op=OperationCode.BEGIN, sk=4, bk=("a",), new_bd=20141008,
                             data={"phone": "2", "email": ""})
    merged = stored.merged_with(incoming)

    assert merged.data == {"name": "n", "phone": "2"}
    assert merged.fk_values == {"region": "R1"}


def test_merge_into_end_drops_begin_fields():
    stored = StagingRecord(op=OperationCode.END_BEGIN, sk=4, bk=("a",), sor_bd=20141001, ed=20141007,
                           new_bd=20141008, data={"name": "n"})
    incoming = StagingRecord(op=OperationCode.END, sk=4, bk=("a",), sor_bd=20141001, ed=20141007)
    merged = stored.merged_with(incoming)

    assert merged.op is OperationCode.END
    assert (merged.new_bd, merged.data) == (None, {})
    merged.check()
