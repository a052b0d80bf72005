use crate::error::{Error, Result};

/// Row-stochasticity tolerance for kernel tables.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Sparse row of a stochastic matrix: `(successor, probability)` with
/// positive probabilities only.
pub type Row = Vec<(usize, f64)>;

fn sparse_row(row: &[f64], width: usize, what: &str) -> Result<Row> {
    if row.len() != width {
        return Err(Error::invalid(
            what,
            format!("row has {} entries, expected {width}", row.len()),
        ));
    }
    let mut total = 0.0;
    let mut out = Vec::new();
    for (j, &p) in row.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::invalid(
                what,
                format!("entry {p} is not a probability"),
            ));
        }
        total += p;
        if p > 0.0 {
            out.push((j, p));
        }
    }
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::invalid(what, format!("row sums to {total}, not 1")));
    }
    Ok(out)
}

/// Inverse-CDF draw from a sparse row.
pub(crate) fn sample_row(row: &Row, u: f64) -> usize {
    let mut acc = 0.0;
    for &(j, p) in row {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.last()
        .map(|&(j, _)| j)
        .expect("stochastic rows are non-empty")
}

/// Transition `G(ρ' | ρ)` of the public experience over a finite label set.
#[derive(Clone, Debug, PartialEq)]
pub struct PublicKernel {
    labels: Vec<String>,
    rows: Vec<Row>,
}

impl PublicKernel {
    pub fn new(labels: Vec<String>, table: &[Vec<f64>]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::invalid("public kernel", "no states"));
        }
        if table.len() != n {
            return Err(Error::invalid(
                "public kernel",
                format!("{} rows for {n} states", table.len()),
            ));
        }
        let rows = table
            .iter()
            .map(|r| sparse_row(r, n, "public kernel"))
            .collect::<Result<_>>()?;
        Ok(Self { labels, rows })
    }

    pub(crate) fn from_rows(labels: Vec<String>, rows: Vec<Row>) -> Result<Self> {
        let n = labels.len();
        for row in &rows {
            check_sparse(row, n, "public kernel")?;
        }
        if rows.len() != n {
            return Err(Error::invalid("public kernel", "row count mismatch"));
        }
        Ok(Self { labels, rows })
    }

    /// Single-state kernel that never moves.
    pub fn identity(label: &str) -> Self {
        Self {
            labels: vec![label.to_string()],
            rows: vec![vec![(0, 1.0)]],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, rho: usize) -> &Row {
        &self.rows[rho]
    }

    pub fn sample(&self, rho: usize, u: f64) -> usize {
        sample_row(&self.rows[rho], u)
    }
}

/// Transition `H(e' | e, ρ)` of the private experience. The type never
/// enters: separability is carried by the signature.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivateKernel {
    labels: Vec<String>,
    /// `rows[e][rho]`
    rows: Vec<Vec<Row>>,
}

impl PrivateKernel {
    /// `table[e][rho]` is the distribution of the next private state.
    pub fn new(labels: Vec<String>, public_states: usize, table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::invalid("private kernel", "no states"));
        }
        if table.len() != n {
            return Err(Error::invalid(
                "private kernel",
                format!("{} blocks for {n} states", table.len()),
            ));
        }
        let mut rows = Vec::with_capacity(n);
        for block in table {
            if block.len() != public_states {
                return Err(Error::invalid(
                    "private kernel",
                    format!("{} rows for {public_states} public states", block.len()),
                ));
            }
            rows.push(
                block
                    .iter()
                    .map(|r| sparse_row(r, n, "private kernel"))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { labels, rows })
    }

    pub(crate) fn from_rows(labels: Vec<String>, rows: Vec<Vec<Row>>) -> Result<Self> {
        let n = labels.len();
        if rows.len() != n {
            return Err(Error::invalid("private kernel", "row count mismatch"));
        }
        for block in &rows {
            for row in block {
                check_sparse(row, n, "private kernel")?;
            }
        }
        Ok(Self { labels, rows })
    }

    pub fn identity(label: &str, public_states: usize) -> Self {
        Self {
            labels: vec![label.to_string()],
            rows: vec![vec![vec![(0, 1.0)]; public_states]],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, e: usize, rho: usize) -> &Row {
        &self.rows[e][rho]
    }

    pub fn sample(&self, e: usize, rho: usize, u: f64) -> usize {
        sample_row(&self.rows[e][rho], u)
    }

    pub(crate) fn public_states(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn check_sparse(row: &Row, n: usize, what: &str) -> Result<()> {
    let mut total = 0.0;
    for &(j, p) in row {
        if j >= n || !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(what, format!("bad entry ({j}, {p})")));
        }
        total += p;
    }
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::invalid(what, format!("row sums to {total}, not 1")));
    }
    Ok(())
}

/// One agent's `(e, ρ)` pair flattened into a single Markov chain with
/// `P((e', ρ') | (e, ρ)) = G(ρ' | ρ) H(e' | e, ρ)`.
///
/// State `s` encodes `e * |P| + ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmChain {
    public_states: usize,
    rows: Vec<Row>,
    /// Topological order of the transition graph with self-loops removed,
    /// when that graph is acyclic.
    topo: Option<Vec<usize>>,
}

impl ArmChain {
    pub fn from_kernels(public: &PublicKernel, private: &PrivateKernel) -> Self {
        let np = public.len();
        let ne = private.len();
        let mut rows = Vec::with_capacity(np * ne);
        for e in 0..ne {
            for rho in 0..np {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for &(r2, pg) in public.row(rho) {
                    for &(e2, ph) in private.row(e, rho) {
                        let s2 = e2 * np + r2;
                        match row.iter_mut().find(|(s, _)| *s == s2) {
                            Some(entry) => entry.1 += pg * ph,
                            None => row.push((s2, pg * ph)),
                        }
                    }
                }
                row.sort_by_key(|&(s, _)| s);
                rows.push(row);
            }
        }
        Self::from_rows(np, rows)
    }

    /// Chain over explicit rows; `public_states` only affects the encoding.
    pub fn from_rows(public_states: usize, rows: Vec<Row>) -> Self {
        let topo = topological_order(&rows);
        Self {
            public_states,
            rows,
            topo,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, s: usize) -> &Row {
        &self.rows[s]
    }

    pub fn encode(&self, e: usize, rho: usize) -> usize {
        e * self.public_states + rho
    }

    pub fn decode(&self, s: usize) -> (usize, usize) {
        (s / self.public_states, s % self.public_states)
    }

    pub fn topological_order(&self) -> Option<&[usize]> {
        self.topo.as_deref()
    }

    /// Self-transition probability of `s`.
    pub fn self_loop(&self, s: usize) -> f64 {
        self.rows[s]
            .iter()
            .find(|(t, _)| *t == s)
            .map_or(0.0, |&(_, p)| p)
    }

    /// States reachable from `start` (including it), in ascending order.
    pub fn reachable(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            for &(t, _) in &self.rows[s] {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        (0..self.len()).filter(|&s| seen[s]).collect()
    }
}

fn topological_order(rows: &[Row]) -> Option<Vec<usize>> {
    let n = rows.len();
    let mut indegree = vec![0usize; n];
    for (s, row) in rows.iter().enumerate() {
        for &(t, _) in row {
            if t != s {
                indegree[t] += 1;
            }
        }
    }
    let mut queue: std::collections::VecDeque<usize> =
        (0..n).filter(|&s| indegree[s] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for &(t, _) in &rows[s] {
            if t != s {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    queue.push_back(t);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}
