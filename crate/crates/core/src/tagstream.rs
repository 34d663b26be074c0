//! Time-tag stream parsing and gated coincidence counting: the software
//! mirror of a time-to-digital converter with tight time gating.
//!
//! The stream format is UTF-8 text, one `channel,timestamp_ps` record per
//! line, sorted by timestamp, LF line endings, with optional `#`-prefixed
//! header lines. Timestamps are unsigned 64-bit picosecond counts.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::pulse_simulator::CountRecord;

/// Default channel numbering of the tag stream.
pub mod channel {
    pub const TRIGGER: u32 = 0;
    pub const IDLER: u32 = 1;
    pub const SIGNAL_1: u32 = 2;
    pub const SIGNAL_2: u32 = 3;
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    pub channel: u32,
    pub timestamp_ps: u64,
}

/// Assignment of stream channel ids to detector roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelMap {
    pub trigger: u32,
    pub idler: u32,
    pub s1: u32,
    pub s2: u32,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            trigger: channel::TRIGGER,
            idler: channel::IDLER,
            s1: channel::SIGNAL_1,
            s2: channel::SIGNAL_2,
        }
    }
}

/// How pulse slots are located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerMode {
    /// Slots follow the trigger-channel tags.
    #[default]
    ExplicitTrigger,
    /// Slots follow a fixed clock phased on the first tag; an extension for
    /// trigger-less exports.
    FixedClock,
}

/// Policy for tags on channels outside the channel map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownChannelPolicy {
    #[default]
    Error,
    /// Drop the tag and count it in the gate report.
    Skip,
}

/// Gating parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateConfig {
    /// Pulse period on the picosecond clock (41 MHz rounds to 24390 ps).
    pub rep_period_ps: u64,
    /// Gate length; tags further than half of this from the slot center are
    /// discarded. Lower edge inclusive, upper edge exclusive.
    pub gate_window_ps: u64,
    pub channels: ChannelMap,
    pub trigger_mode: TriggerMode,
    pub unknown_channel: UnknownChannelPolicy,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            rep_period_ps: 24_390,
            gate_window_ps: 500,
            channels: ChannelMap::default(),
            trigger_mode: TriggerMode::default(),
            unknown_channel: UnknownChannelPolicy::default(),
        }
    }
}

impl GateConfig {
    pub fn new(rep_period_ps: u64, gate_window_ps: u64) -> Self {
        Self {
            rep_period_ps,
            gate_window_ps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rep_period_ps == 0 {
            return Err(Error::InvalidGateConfig("pulse period must be nonzero".into()));
        }
        if self.gate_window_ps == 0 || self.gate_window_ps > self.rep_period_ps {
            return Err(Error::InvalidGateConfig(format!(
                "gate window {} ps must lie in 1..={} ps",
                self.gate_window_ps, self.rep_period_ps
            )));
        }
        let ids = [
            self.channels.trigger,
            self.channels.idler,
            self.channels.s1,
            self.channels.s2,
        ];
        for (i, a) in ids.iter().enumerate() {
            if ids[i + 1..].contains(a) {
                return Err(Error::InvalidGateConfig(format!(
                    "channel id {a} assigned to two roles"
                )));
            }
        }
        Ok(())
    }
}

/// Parses a tag stream, skipping `#` header lines. Malformed lines fail
/// with their 1-based line number.
pub fn parse_tags<R: BufRead>(reader: R) -> Result<Vec<TimeTag>> {
    let mut tags = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let number = index as u64 + 1;
        if line.starts_with('#') {
            continue;
        }
        let (ch, ts) = line.split_once(',').ok_or_else(|| Error::TagParse {
            line: number,
            message: format!("expected two comma-separated fields, got {line:?}"),
        })?;
        let channel: u32 = ch.trim().parse().map_err(|e| Error::TagParse {
            line: number,
            message: format!("bad channel field {ch:?}: {e}"),
        })?;
        let timestamp_ps: u64 = ts.trim().parse().map_err(|e| Error::TagParse {
            line: number,
            message: format!("bad timestamp field {ts:?}: {e}"),
        })?;
        tags.push(TimeTag {
            channel,
            timestamp_ps,
        });
    }
    Ok(tags)
}

/// Gating outcome: the tallies plus drop diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateReport {
    pub record: CountRecord,
    /// Tags on unmapped channels (with the `Skip` policy).
    pub unknown_skipped: u64,
    /// Mapped tags outside every gate.
    pub out_of_gate: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Idler,
    S1,
    S2,
}

/// Folds a time-sorted tag sequence onto the pulse clock, applies the
/// detection gate and tallies singles and coincidences. Multiple tags on
/// one channel within one slot count as a single click.
pub fn gate_and_count(tags: &[TimeTag], gate: &GateConfig) -> Result<GateReport> {
    gate.validate()?;
    for (index, pair) in tags.windows(2).enumerate() {
        if pair[1].timestamp_ps < pair[0].timestamp_ps {
            return Err(Error::UnsortedTags { index: index + 1 });
        }
    }

    let half = (gate.gate_window_ps / 2) as i128;
    let period = gate.rep_period_ps as i128;

    // slot centers and the pulse count, by trigger tags or by a fixed clock
    let mut triggers: Vec<u64> = Vec::new();
    let (pulses, fixed_phase) = match gate.trigger_mode {
        TriggerMode::ExplicitTrigger => {
            triggers = tags
                .iter()
                .filter(|t| t.channel == gate.channels.trigger)
                .map(|t| t.timestamp_ps)
                .collect();
            if triggers.is_empty() {
                return Err(Error::NoTriggers);
            }
            (triggers.len() as u64, 0u64)
        }
        TriggerMode::FixedClock => {
            if tags.is_empty() {
                return Err(Error::NoTriggers);
            }
            let t0 = tags[0].timestamp_ps;
            let span = tags[tags.len() - 1].timestamp_ps - t0;
            (span / gate.rep_period_ps + 1, t0)
        }
    };

    let locate = |ts: u64| -> (u64, i128) {
        match gate.trigger_mode {
            TriggerMode::ExplicitTrigger => {
                let idx = triggers.partition_point(|&t| t <= ts);
                let next = idx.min(triggers.len() - 1);
                let prev = idx.saturating_sub(1);
                let d_prev = ts as i128 - triggers[prev] as i128;
                let d_next = ts as i128 - triggers[next] as i128;
                if idx == 0 || (idx < triggers.len() && -d_next <= d_prev) {
                    (next as u64, d_next)
                } else {
                    (prev as u64, d_prev)
                }
            }
            TriggerMode::FixedClock => {
                let rel = (ts - fixed_phase) as i128;
                let slot = (rel + period / 2).div_euclid(period);
                (slot as u64, rel - slot * period)
            }
        }
    };

    let mut record = CountRecord {
        pulses,
        ..CountRecord::default()
    };
    let mut unknown_skipped = 0u64;
    let mut out_of_gate = 0u64;

    let mut current_slot: Option<u64> = None;
    let mut flags = [false; 3];
    let mut flush = |record: &mut CountRecord, flags: &mut [bool; 3]| {
        let [i, s1, s2] = *flags;
        record.s_i += u64::from(i);
        record.s_s1 += u64::from(s1);
        record.s_s2 += u64::from(s2);
        record.c_is1 += u64::from(i && s1);
        record.c_is2 += u64::from(i && s2);
        record.c_s1s2 += u64::from(s1 && s2);
        record.c_is1s2 += u64::from(i && s1 && s2);
        record.c_is += u64::from(i && (s1 || s2));
        *flags = [false; 3];
    };

    for (index, tag) in tags.iter().enumerate() {
        let role = if tag.channel == gate.channels.idler {
            Role::Idler
        } else if tag.channel == gate.channels.s1 {
            Role::S1
        } else if tag.channel == gate.channels.s2 {
            Role::S2
        } else if tag.channel == gate.channels.trigger {
            continue;
        } else {
            match gate.unknown_channel {
                UnknownChannelPolicy::Skip => {
                    unknown_skipped += 1;
                    continue;
                }
                UnknownChannelPolicy::Error => {
                    return Err(Error::UnknownChannel {
                        channel: tag.channel,
                        line: index as u64 + 1,
                    });
                }
            }
        };

        let (slot, delta) = locate(tag.timestamp_ps);
        if delta < -half || delta >= half {
            out_of_gate += 1;
            continue;
        }
        if current_slot != Some(slot) {
            if current_slot.is_some() {
                flush(&mut record, &mut flags);
            }
            current_slot = Some(slot);
        }
        flags[match role {
            Role::Idler => 0,
            Role::S1 => 1,
            Role::S2 => 2,
        }] = true;
    }
    if current_slot.is_some() {
        flush(&mut record, &mut flags);
    }

    Ok(GateReport {
        record,
        unknown_skipped,
        out_of_gate,
    })
}

/// CSV keys of the count-record serialization, in order.
pub const COUNT_RECORD_KEYS: [&str; 9] = [
    "pulses", "s_i", "s_s1", "s_s2", "c_is", "c_is1", "c_is2", "c_s1s2", "c_is1s2",
];

/// Writes the `key,value` CSV form of a record.
pub fn write_count_record_csv<W: Write>(record: &CountRecord, sink: &mut W) -> Result<()> {
    let values = [
        record.pulses,
        record.s_i,
        record.s_s1,
        record.s_s2,
        record.c_is,
        record.c_is1,
        record.c_is2,
        record.c_s1s2,
        record.c_is1s2,
    ];
    for (key, value) in COUNT_RECORD_KEYS.iter().zip(values) {
        writeln!(sink, "{key},{value}")?;
    }
    Ok(())
}

/// Reads the `key,value` CSV form back into a record.
pub fn read_count_record_csv<R: BufRead>(reader: R) -> Result<CountRecord> {
    let mut record = CountRecord::default();
    let mut seen = [false; 9];
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let number = index as u64 + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once(',').ok_or_else(|| Error::TagParse {
            line: number,
            message: "expected key,value".into(),
        })?;
        let value: u64 = value.trim().parse().map_err(|e| Error::TagParse {
            line: number,
            message: format!("bad count {value:?}: {e}"),
        })?;
        let slot = COUNT_RECORD_KEYS
            .iter()
            .position(|k| *k == key.trim())
            .ok_or_else(|| Error::TagParse {
                line: number,
                message: format!("unknown key {key:?}"),
            })?;
        seen[slot] = true;
        match slot {
            0 => record.pulses = value,
            1 => record.s_i = value,
            2 => record.s_s1 = value,
            3 => record.s_s2 = value,
            4 => record.c_is = value,
            5 => record.c_is1 = value,
            6 => record.c_is2 = value,
            7 => record.c_s1s2 = value,
            _ => record.c_is1s2 = value,
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InconsistentRecord(format!(
            "missing key {}",
            COUNT_RECORD_KEYS[missing]
        )));
    }
    Ok(record)
}
