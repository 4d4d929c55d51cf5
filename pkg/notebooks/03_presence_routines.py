"""Reconstruct online intervals from a presence log and compare two subjects."""

import io

from wiretrace.presence import copresence, read_observation_log, reconstruct_intervals, routine_histogram

LOG = """subject,timestamp,state,last_seen
alice,2026-03-01T07:55:00Z,online,
bob,2026-03-01T08:10:00Z,online,
alice,2026-03-01T08:40:00Z,offline,
bob,2026-03-01T08:41:00Z,offline,
bob,2026-03-01T08:41:30Z,online,
alice,2026-03-01T21:05:00Z,online,
alice,2026-03-01T21:30:00Z,last_seen,2026-03-01T21:20:00Z
bob,2026-03-01T21:21:00Z,online,
bob,2026-03-01T21:50:00Z,offline,
"""

logs = read_observation_log(io.StringIO(LOG))
# a client that stays connected reports nothing until it goes offline
intervals = {who: reconstruct_intervals(obs, offline_timeout=7200) for who, obs in logs.items()}

for who, ivs in intervals.items():
    print(f"{who}:")
    for iv in ivs:
        flag = "  (uncertain end)" if iv.uncertain else ""
        print(f"  online {iv.start} .. {iv.end}  {iv.duration} s{flag}")
    hist = routine_histogram(ivs, tz_offset=60, subject=who)
    busy = [h for h, sec in enumerate(hist.hourly_activity) if sec]
    print(f"  active local hours (UTC+1): {busy}")

c = copresence(intervals["alice"], intervals["bob"])
print(f"\njoint online {c.joint_seconds} s, Jaccard {c.jaccard:.3f}, alternations {c.alternation_count}")
