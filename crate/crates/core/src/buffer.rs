//! Server-side history of the last `h` rounds: global gradients and the local
//! gradient records aggregated in each of those rounds.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::gradmath::{cosine_similarity, GradientVec};

/// A submitted local gradient and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub client_id: usize,
    pub grad: GradientVec,
    pub submit_round: u64,
    /// Round of the global model the client trained from.
    pub base_round: u64,
    pub staleness: u64,
    pub sample_count: usize,
}

impl GradientRecord {
    /// Staleness is `submit_round - base_round` and must be at least 1.
    pub fn new(
        client_id: usize,
        grad: GradientVec,
        submit_round: u64,
        base_round: u64,
        sample_count: usize,
    ) -> Result<Self> {
        if base_round >= submit_round {
            return Err(Error::InvalidArgument(format!(
                "base round {base_round} must precede submit round {submit_round}"
            )));
        }
        if sample_count == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        Ok(Self {
            client_id,
            grad,
            submit_round,
            base_round,
            staleness: submit_round - base_round,
            sample_count,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    depth: usize,
    globals: VecDeque<(u64, GradientVec)>,
    locals: VecDeque<(u64, Vec<GradientRecord>)>,
}

impl HistoryBuffer {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("history depth must be >= 1".into()));
        }
        Ok(Self {
            depth,
            globals: VecDeque::with_capacity(depth + 1),
            locals: VecDeque::with_capacity(depth + 1),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.globals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.globals.is_empty()
    }

    pub fn last_round(&self) -> Option<u64> {
        self.globals.back().map(|(r, _)| *r)
    }

    pub fn retained_rounds(&self) -> Vec<u64> {
        self.globals.iter().map(|(r, _)| *r).collect()
    }

    pub fn globals(&self) -> impl Iterator<Item = (u64, &GradientVec)> {
        self.globals.iter().map(|(r, g)| (*r, g))
    }

    pub fn global_at(&self, round: u64) -> Option<&GradientVec> {
        self.globals.iter().find(|(r, _)| *r == round).map(|(_, g)| g)
    }

    /// Appends round `round`, evicting the oldest round beyond the depth.
    pub fn push_round(
        &mut self,
        round: u64,
        global_grad: GradientVec,
        local_records: Vec<GradientRecord>,
    ) -> Result<()> {
        if let Some(last) = self.last_round() {
            if round != last + 1 {
                return Err(Error::NonConsecutiveRound { expected: last + 1, found: round });
            }
        }
        self.globals.push_back((round, global_grad));
        self.locals.push_back((round, local_records));
        while self.globals.len() > self.depth {
            self.globals.pop_front();
            self.locals.pop_front();
        }
        Ok(())
    }

    /// The cached global gradient least similar to `g`. Ties go to the most
    /// recent round. `None` when nothing is cached.
    pub fn select_collaborative(&self, g: &GradientVec) -> Result<Option<&GradientVec>> {
        let mut best: Option<(f64, &GradientVec)> = None;
        for (_, cand) in self.globals.iter().rev() {
            let sim = cosine_similarity(g, cand)?;
            if best.map_or(true, |(s, _)| sim < s) {
                best = Some((sim, cand));
            }
        }
        Ok(best.map(|(_, v)| v))
    }

    /// Relatively fresh records for round `r`: those trained from the global
    /// model of round `r - h - 1`, ordered by submit round then client id.
    /// Empty while `r <= h`.
    pub fn fresh_set(&self, r: u64) -> Vec<&GradientRecord> {
        let h = self.depth as u64;
        if r <= h {
            return Vec::new();
        }
        let base = r - h - 1;
        let mut out: Vec<&GradientRecord> = self
            .locals
            .iter()
            .flat_map(|(_, recs)| recs.iter())
            .filter(|rec| rec.base_round == base)
            .collect();
        out.sort_by_key(|rec| (rec.submit_round, rec.client_id));
        out
    }

    /// Records pushed for `round`, in push order.
    pub fn round_participants(&self, round: u64) -> Result<&[GradientRecord]> {
        self.locals
            .iter()
            .find(|(r, _)| *r == round)
            .map(|(_, recs)| recs.as_slice())
            .ok_or(Error::RoundNotRetained(round))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gv(v: &[f64]) -> GradientVec {
        GradientVec::new(v.to_vec()).unwrap()
    }

    fn rec(client: usize, submit: u64, base: u64) -> GradientRecord {
        GradientRecord::new(client, gv(&[client as f64, submit as f64]), submit, base, 1).unwrap()
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = HistoryBuffer::new(2).unwrap();
        assert!(b.is_empty());
        b.push_round(1, gv(&[1.]), vec![]).unwrap();
        assert_eq!(b.len(), 1);
        b.push_round(2, gv(&[2.]), vec![]).unwrap();
        b.push_round(3, gv(&[3.]), vec![]).unwrap();
        assert_eq!(b.retained_rounds(), vec![2, 3]);
    }

    #[test]
    fn non_consecutive_push_fails() {
        let mut b = HistoryBuffer::new(3).unwrap();
        for r in 1..=3 {
            b.push_round(r, gv(&[0.]), vec![]).unwrap();
        }
        assert!(matches!(
            b.push_round(5, gv(&[0.]), vec![]),
            Err(Error::NonConsecutiveRound { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn record_staleness_invariant() {
        assert_eq!(rec(0, 5, 2).staleness, 3);
        assert!(GradientRecord::new(0, gv(&[1.]), 3, 3, 1).is_err());
        assert!(GradientRecord::new(0, gv(&[1.]), 3, 1, 0).is_err());
    }

    #[test]
    fn collaborative_picks_least_similar() {
        let mut b = HistoryBuffer::new(3).unwrap();
        assert!(b.select_collaborative(&gv(&[1., 0.])).unwrap().is_none());
        b.push_round(1, gv(&[1., 0.]), vec![]).unwrap();
        b.push_round(2, gv(&[0., 1.]), vec![]).unwrap();
        // cos with (1, 0) is 0.995, with (0, 1) is 0.0995
        let picked = b.select_collaborative(&gv(&[1., 0.1])).unwrap().unwrap();
        assert_eq!(picked.as_slice(), &[0., 1.]);
    }

    #[test]
    fn collaborative_singleton_and_ties() {
        let mut b = HistoryBuffer::new(3).unwrap();
        let g = gv(&[0.3, -0.2]);
        b.push_round(1, g.clone(), vec![]).unwrap();
        assert_eq!(b.select_collaborative(&g).unwrap().unwrap(), &g);
        // same direction, different magnitude: equal similarity, newest wins
        b.push_round(2, gv(&[0., 2.]), vec![]).unwrap();
        b.push_round(3, gv(&[0., 5.]), vec![]).unwrap();
        let picked = b.select_collaborative(&gv(&[1., 0.])).unwrap().unwrap();
        assert_eq!(picked.as_slice(), &[0., 5.]);
    }

    #[test]
    fn fresh_set_examples() {
        let mut b = HistoryBuffer::new(2).unwrap();
        b.push_round(1, gv(&[0., 0.]), vec![]).unwrap();
        b.push_round(2, gv(&[0., 0.]), vec![rec(1, 2, 1)]).unwrap();
        b.push_round(3, gv(&[0., 0.]), vec![rec(2, 3, 1), rec(3, 3, 2)]).unwrap();
        let fresh = b.fresh_set(4);
        let got: Vec<(usize, u64)> = fresh.iter().map(|r| (r.client_id, r.submit_round)).collect();
        assert_eq!(got, vec![(1, 2), (2, 3)]);
        assert_eq!(b.fresh_set(2).len(), 0);
        let empty = HistoryBuffer::new(2).unwrap();
        assert!(empty.fresh_set(4).is_empty());
    }

    #[test]
    fn participants_lookup() {
        let mut b = HistoryBuffer::new(2).unwrap();
        b.push_round(1, gv(&[0., 0.]), vec![]).unwrap();
        b.push_round(2, gv(&[0., 0.]), vec![]).unwrap();
        b.push_round(3, gv(&[0., 0.]), vec![rec(4, 3, 2), rec(1, 3, 1)]).unwrap();
        let p = b.round_participants(3).unwrap();
        assert_eq!(p.iter().map(|r| r.client_id).collect::<Vec<_>>(), vec![4, 1]);
        assert!(matches!(b.round_participants(1), Err(Error::RoundNotRetained(1))));
        assert!(b.round_participants(9).is_err());
    }

    proptest! {
        #[test]
        fn length_bounded_and_collaborative_matches_scan(
            depth in 1usize..6,
            globals in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..15),
            probe in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let mut b = HistoryBuffer::new(depth).unwrap();
            let probe = gv(&probe);
            for (i, g) in globals.iter().enumerate() {
                b.push_round(i as u64 + 1, gv(g), vec![]).unwrap();
                prop_assert!(b.len() <= depth);
                let r = i as u64 + 1;
                prop_assert_eq!(b.retained_rounds()[0], r.saturating_sub(depth as u64 - 1).max(1));

                let mut best: Option<(f64, u64)> = None;
                for (round, cand) in b.globals() {
                    let s = cosine_similarity(&probe, cand).unwrap();
                    if best.map_or(true, |(bs, _)| s <= bs) {
                        best = Some((s, round));
                    }
                }
                let expected = b.global_at(best.unwrap().1).unwrap();
                prop_assert_eq!(b.select_collaborative(&probe).unwrap().unwrap(), expected);
            }
        }
    }
}
