//! Discretized càdlàg paths with an explicit jump record.

use std::io::{self, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub delta: Vec<f64>,
}

/// Right-continuous path sampled on a strictly increasing grid. The stored
/// value at a grid time is the right limit; jumps sit on grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CadlagPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    jumps: Vec<Jump>,
    // grid index of each jump, parallel to `jumps`
    jump_slots: Vec<usize>,
}

impl CadlagPath {
    pub fn new(dim: usize, times: Vec<f64>, values: Vec<f64>, jumps: Vec<Jump>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("path dimension must be positive".into()));
        }
        if times.is_empty() {
            return Err(Error::InvalidArgument("empty time grid".into()));
        }
        if values.len() != times.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} times of dimension {dim}",
                values.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("grid times must be finite and strictly increasing".into()));
        }
        let mut jump_slots = Vec::with_capacity(jumps.len());
        let mut prev = f64::NEG_INFINITY;
        for j in &jumps {
            if j.delta.len() != dim {
                return Err(Error::Dimension("jump vector dimension".into()));
            }
            if j.time <= prev {
                return Err(Error::InvalidArgument("jump times must be strictly increasing".into()));
            }
            prev = j.time;
            let slot = times
                .binary_search_by(|t| t.total_cmp(&j.time))
                .map_err(|_| Error::InvalidArgument(format!("jump time {} is not a grid node", j.time)))?;
            if slot == 0 {
                return Err(Error::InvalidArgument("jump at the initial time".into()));
            }
            jump_slots.push(slot);
        }
        Ok(Self { dim, times, values, jumps, jump_slots })
    }

    pub fn zeros(dim: usize, times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::new(dim, times, vec![0.0; n * dim], Vec::new())
    }

    /// Continuous path from per-node values (no jump record).
    pub fn continuous(dim: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(dim, times, values, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn jump_slots(&self) -> &[usize] {
        &self.jump_slots
    }

    /// Jump vector at grid index `i`, if any.
    pub fn jump_at(&self, i: usize) -> Option<&[f64]> {
        self.jump_slots.binary_search(&i).ok().map(|k| self.jumps[k].delta.as_slice())
    }

    pub fn left_limit(&self, i: usize) -> Vec<f64> {
        let mut v = self.value(i).to_vec();
        if let Some(d) = self.jump_at(i) {
            for (a, b) in v.iter_mut().zip(d) {
                *a -= b;
            }
        }
        v
    }

    /// Exact grid lookup.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok()
    }

    /// Index of the last grid time `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> Result<usize> {
        if t < self.times[0] || t > self.horizon() {
            return Err(Error::TimeRange { time: t, lo: self.times[0], hi: self.horizon() });
        }
        Ok(self.times.partition_point(|x| *x <= t) - 1)
    }

    /// Right-continuous piecewise-constant evaluation.
    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        Ok(self.value(self.index_at_or_before(t)?))
    }

    /// Nearest grid node to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let p = self.times.partition_point(|x| *x < t);
        if p == 0 {
            return 0;
        }
        if p == self.times.len() {
            return p - 1;
        }
        if (self.times[p] - t).abs() < (t - self.times[p - 1]).abs() {
            p
        } else {
            p - 1
        }
    }

    /// Keep only the listed grid indices (sorted, must include every jump slot).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let times: Vec<f64> = indices.iter().map(|&i| self.times[i]).collect();
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.value(i));
        }
        for &slot in &self.jump_slots {
            if indices.binary_search(&slot).is_err() {
                return Err(Error::InvalidArgument("selection drops a jump node".into()));
            }
        }
        Self::new(self.dim, times, values, self.jumps.clone())
    }

    /// `self + other` on a shared grid; jump records are merged.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, 1.0)
    }

    /// `a * self + b * other` on a shared grid.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.times != other.times || self.dim != other.dim {
            return Err(Error::Dimension("paths live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let jumps = merge_jumps(&self.jumps, a, &other.jumps, b);
        Self::new(self.dim, self.times.clone(), values, jumps)
    }

    /// Sup-norm distance over the common grid (grids must match).
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.times.len() != other.times.len() || self.dim != other.dim {
            return Err(Error::Dimension("paths live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Sup-norm distance over the nodes of `self`, each looked up exactly in `other`.
    pub fn sup_distance_on(&self, other: &Self) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::Dimension("paths have different dimensions".into()));
        }
        let mut sup = 0.0f64;
        for (i, t) in self.times.iter().enumerate() {
            let j = other.index_of(*t).ok_or_else(|| Error::InvalidArgument(format!("time {t} missing from finer grid")))?;
            for (a, b) in self.value(i).iter().zip(other.value(j)) {
                sup = sup.max((a - b).abs());
            }
        }
        Ok(sup)
    }

    /// CSV with columns `time, v1..vk, is_jump`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "time")?;
        for j in 1..=self.dim {
            write!(w, ",v{j}")?;
        }
        writeln!(w, ",is_jump")?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.value(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", u8::from(self.jump_at(i).is_some()))?;
        }
        Ok(())
    }
}

pub(crate) fn merge_jumps(a: &[Jump], sa: f64, b: &[Jump], sb: f64) -> Vec<Jump> {
    let mut out: Vec<Jump> = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].time <= b[j].time);
        let (time, delta): (f64, Vec<f64>) = if take_a {
            let r = (a[i].time, a[i].delta.iter().map(|x| sa * x).collect());
            i += 1;
            r
        } else {
            let r = (b[j].time, b[j].delta.iter().map(|x| sb * x).collect());
            j += 1;
            r
        };
        match out.last_mut() {
            Some(last) if last.time == time => {
                for (x, y) in last.delta.iter_mut().zip(&delta) {
                    *x += y;
                }
            }
            _ => out.push(Jump { time, delta }),
        }
    }
    out.retain(|j| j.delta.iter().any(|x| *x != 0.0));
    out
}
