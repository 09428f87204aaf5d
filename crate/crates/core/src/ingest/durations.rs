use std::collections::HashMap;

use crate::schema::{CourseStore, Id};
use crate::time::Duration;

/// Fills `observed_event_duration` for every observed event.
///
/// A visit lasts until the same user's next observed event, capped at `cap`.
/// The user's last event has no successor and gets zero.
pub fn compute_durations(store: &mut CourseStore, cap: Duration) {
    let mut by_user: HashMap<Id, Vec<usize>> = HashMap::new();
    for (i, e) in store.observed_events.iter().enumerate() {
        by_user.entry(e.user_id_observed).or_default().push(i);
    }
    for idx in by_user.into_values() {
        let mut idx = idx;
        let rows = &store.observed_events;
        idx.sort_by_key(|&i| (rows[i].observed_event_timestamp, rows[i].observed_event_id));
        let times: Vec<_> = idx.iter().map(|&i| rows[i].observed_event_timestamp).collect();
        for (pos, &i) in idx.iter().enumerate() {
            let d = match times.get(pos + 1) {
                Some(next) => next.since(times[pos]).min(cap),
                None => Duration::ZERO,
            };
            store.observed_events[i].observed_event_duration = d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ObservedEvent;
    use crate::time::Timestamp;

    fn ev(id: Id, user: Id, secs: i64) -> ObservedEvent {
        ObservedEvent {
            observed_event_id: id,
            user_id_observed: user,
            resource_id: 1,
            url_id: 1,
            observed_event_timestamp: Timestamp::from_ymd_hms(2013, 3, 4, 0, 0, 0).plus_millis(secs * 1000),
            observed_event_duration: Duration::ZERO,
            observed_event_ip: String::new(),
            observed_event_os: String::new(),
            observed_event_agent: String::new(),
        }
    }

    #[test]
    fn next_event_delta_capped() {
        let mut s = CourseStore::new("c");
        s.observed_events = vec![ev(1, 7, 0), ev(2, 8, 5), ev(3, 7, 120), ev(4, 7, 120 + 4000)];
        compute_durations(&mut s, Duration::from_secs(1800));
        let d: Vec<u64> = s.observed_events.iter().map(|e| e.observed_event_duration.millis()).collect();
        assert_eq!(d, vec![120_000, 0, 1_800_000, 0]);
    }
}
