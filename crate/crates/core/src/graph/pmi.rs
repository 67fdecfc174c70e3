//! Normalized PMI weights for argument–argument edges, counted over sliding
//! windows of the selected context.

use std::collections::HashMap;

/// Which windows of a token stream contain each phrase.
#[derive(Debug, Clone)]
pub struct PmiCounts<'a> {
    stream: &'a [String],
    window: usize,
}

impl<'a> PmiCounts<'a> {
    pub fn new(stream: &'a [String], window: usize) -> Self {
        assert!(window >= 2, "window must be at least 2");
        PmiCounts { stream, window }
    }

    /// Number of windows; a stream shorter than the window is one window.
    pub fn total(&self) -> usize {
        if self.stream.len() < self.window {
            1
        } else {
            self.stream.len() - self.window + 1
        }
    }

    fn width(&self) -> usize {
        self.window.min(self.stream.len())
    }

    /// Membership mask over windows for a contiguous phrase.
    pub fn mask(&self, phrase: &[String]) -> Vec<bool> {
        let total = self.total();
        let width = self.width();
        let mut mask = vec![false; total];
        let len = phrase.len();
        if len == 0 || len > width {
            return mask;
        }
        for o in 0..=self.stream.len() - len {
            if self.stream[o..o + len] != *phrase {
                continue;
            }
            // window s covers [s, s + width); need s <= o and o + len <= s + width
            let lo = (o + len).saturating_sub(width);
            let hi = o.min(total - 1);
            for m in &mut mask[lo..=hi] {
                *m = true;
            }
        }
        mask
    }
}

/// `max(npmi, floor)` from window counts.
pub fn npmi_weight(cx: usize, cy: usize, cxy: usize, total: usize, floor: f64) -> f64 {
    if cxy == 0 {
        return floor;
    }
    let n = total as f64;
    let (px, py, pxy) = (cx as f64 / n, cy as f64 / n, cxy as f64 / n);
    let npmi = if cxy == total {
        1.0
    } else {
        (pxy / (px * py)).ln() / -pxy.ln()
    };
    npmi.max(floor)
}

/// Weights for each `(i, j)` pair, given each node's lowercased phrase tokens.
pub fn compute_pmi_weights(
    pairs: &[(usize, usize)],
    phrases: &HashMap<usize, Vec<String>>,
    stream: &[String],
    window: usize,
    floor: f64,
) -> HashMap<(usize, usize), f64> {
    let counts = PmiCounts::new(stream, window);
    let mut masks: HashMap<usize, Vec<bool>> = HashMap::new();
    for &(a, b) in pairs {
        for i in [a, b] {
            masks
                .entry(i)
                .or_insert_with(|| counts.mask(&phrases[&i]));
        }
    }
    pairs
        .iter()
        .map(|&(a, b)| {
            let (ma, mb) = (&masks[&a], &masks[&b]);
            let cx = ma.iter().filter(|&&m| m).count();
            let cy = mb.iter().filter(|&&m| m).count();
            let cxy = ma.iter().zip(mb).filter(|(&x, &y)| x && y).count();
            ((a, b), npmi_weight(cx, cy, cxy, counts.total(), floor))
        })
        .collect()
}
