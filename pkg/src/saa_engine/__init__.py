"""Deterministic strategic asset allocation pipeline.

Stages: macro regime classification, per-asset capital market assumptions
with a rule-based judge, 21 portfolio construction methods, peer review
with modified Borda voting, CRO risk reporting with IPS compliance, and a
CIO ensemble decision rendered as a board memo.  Every stage is a pure
function of its inputs plus recorded seeds, so runs replay byte-for-byte.
"""

__version__ = "0.1.0"
