//! Evolutionary search: warm start, mutation phase, two-phase bracket
//! competitions, budget accounting and final selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::morph::{apply_mutation, enumerate_mutations, Mutation, MutationKind};
use crate::net::{evaluate, train_epochs, NetError, Network, TrainOptions};
use crate::rng::{rng_from, stream, RunRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Ectonas,
    Random,
    Baseline,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ectonas" => Ok(SearchMode::Ectonas),
            "random" => Ok(SearchMode::Random),
            "baseline" => Ok(SearchMode::Baseline),
            _ => Err(format!("unknown mode {s:?}; expected ectonas, random or baseline")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub alpha: f64,
    pub budget: usize,
    pub warm_start_epochs: usize,
    pub bracket_epochs: usize,
    pub n_winners: usize,
    pub baseline_epochs: usize,
    pub seed: u64,
    pub train: TrainOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Ectonas,
            alpha: 1.0,
            budget: 1000,
            warm_start_epochs: 10,
            bracket_epochs: 2,
            n_winners: 2,
            baseline_epochs: 200,
            seed: 42,
            train: TrainOptions::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.bracket_epochs == 0 || self.n_winners == 0 {
            return bad("bracket_epochs and n_winners must be >= 1".into());
        }
        match self.mode {
            SearchMode::Baseline if self.baseline_epochs == 0 => bad("baseline_epochs must be >= 1".into()),
            SearchMode::Baseline => Ok(()),
            _ if self.warm_start_epochs == 0 => bad("warm_start_epochs must be >= 1".into()),
            _ if self.budget < self.warm_start_epochs => bad(format!(
                "budget {} does not cover the {}-epoch warm start",
                self.budget, self.warm_start_epochs
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("data does not fit the starting network: {0}")]
    Data(String),
    #[error("candidate {candidate} diverged in generation {generation}, epoch {epoch}")]
    Divergence {
        generation: usize,
        candidate: u64,
        epoch: usize,
    },
    #[error("budget exceeded: {requested} epochs requested with {remaining} remaining")]
    Budget { requested: usize, remaining: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub s: f64,
    pub v: f64,
    pub delta_v: f64,
    pub delta_p: f64,
    pub alpha: f64,
}

/// Fitness of a child relative to its parent: `v` when `alpha = 1`,
/// otherwise `alpha * dv - (1 - alpha) * dp` with `dp = p / p_parent - 1`.
pub fn score(v: f64, p: usize, parent_v: f64, parent_p: usize, alpha: f64) -> FitnessScore {
    let delta_v = v - parent_v;
    let delta_p = p as f64 / parent_p as f64 - 1.0;
    let s = if alpha == 1.0 {
        v
    } else {
        alpha * delta_v - (1.0 - alpha) * delta_p
    };
    FitnessScore {
        s,
        v,
        delta_v,
        delta_p,
        alpha,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub total_epochs: usize,
    pub spent_epochs: usize,
}

impl Budget {
    pub fn new(total_epochs: usize) -> Self {
        Self {
            total_epochs,
            spent_epochs: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.total_epochs - self.spent_epochs
    }

    fn charge(&mut self, epochs: usize) -> Result<(), SearchError> {
        if epochs > self.remaining() {
            return Err(SearchError::Budget {
                requested: epochs,
                remaining: self.remaining(),
            });
        }
        self.spent_epochs += epochs;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub candidate: u64,
    pub val_accuracy: f64,
    pub param_count: usize,
    /// Set on the first epoch a mutated candidate trains.
    pub mutation: Option<MutationKind>,
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub mutation: Mutation,
    pub network: Network,
    pub epochs_trained: usize,
    pub val_accuracy: f64,
    pub param_count: usize,
    /// Parent statistics at spawn time, the reference for fitness deltas.
    pub parent_val_accuracy: f64,
    pub parent_param_count: usize,
    /// Training curve of the whole lineage up to this candidate.
    pub history: Vec<CurvePoint>,
}

impl Candidate {
    pub fn score(&self, alpha: f64) -> FitnessScore {
        score(
            self.val_accuracy,
            self.param_count,
            self.parent_val_accuracy,
            self.parent_param_count,
            alpha,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmStart,
    Phase1,
    Phase2,
    Final,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringRecord {
    pub parent: u64,
    pub mutation: Mutation,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub param_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub generation: usize,
    pub phase: Phase,
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<MutationKind>,
    pub winner: u64,
    pub loser: u64,
    pub winner_kind: MutationKind,
    pub loser_kind: MutationKind,
    pub winner_score: FitnessScore,
    pub loser_score: FitnessScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub parent_ids: Vec<u64>,
    pub offspring: Vec<OffspringRecord>,
    pub pairs: Vec<PairRecord>,
    pub lucky: Vec<u64>,
    pub kind_winners: Vec<(MutationKind, u64)>,
    pub winners: Vec<u64>,
}

/// Everything the search reports while it runs, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Train {
        generation: usize,
        phase: Phase,
        candidate: u64,
        epochs: usize,
        epochs_trained: usize,
        val_accuracy: f64,
        param_count: usize,
        spent: usize,
    },
    Spawn {
        generation: usize,
        candidate: u64,
        parent: u64,
        mutation: Mutation,
        param_count: usize,
        val_accuracy: f64,
    },
    Reject {
        generation: usize,
        parent: u64,
        mutation: Mutation,
        reason: String,
    },
    Pair(PairRecord),
    Lucky {
        generation: usize,
        phase: Phase,
        round: usize,
        candidate: u64,
    },
    Generation {
        index: usize,
        parents: Vec<u64>,
        kind_winners: Vec<(MutationKind, u64)>,
        winners: Vec<u64>,
        spent: usize,
    },
    BudgetStop {
        generation: usize,
        remaining: usize,
        cycle_cost: usize,
    },
    Final {
        candidate: u64,
        val_accuracy: f64,
        param_count: usize,
        epochs_trained: usize,
        score: FitnessScore,
    },
}

pub trait Observer {
    fn event(&mut self, event: &Event);
}

impl Observer for Vec<Event> {
    fn event(&mut self, event: &Event) {
        self.push(event.clone());
    }
}

pub struct Discard;

impl Observer for Discard {
    fn event(&mut self, _: &Event) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub val_accuracy: f64,
    pub param_count: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub winner: Candidate,
    pub start: Stats,
    pub generations: Vec<GenerationRecord>,
    pub curves: Vec<CurvePoint>,
    pub budget: Budget,
    pub test_accuracy: Option<f64>,
}

/// Training, validation and (optional) test data.
#[derive(Debug, Clone, Copy)]
pub struct SearchData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

/// Epochs one bracket costs: every survivor of every round trains once,
/// a pool already at or below `target` costs nothing unless `target == 1`
/// and the pool is a single candidate.
pub fn bracket_cost(pool: usize, target: usize) -> usize {
    if pool == 0 {
        return 0;
    }
    if pool <= target {
        return if target == 1 { 1 } else { 0 };
    }
    let mut m = pool;
    let mut cost = 0;
    while m > target {
        cost += m;
        m -= (m / 2).min(m - target);
    }
    cost
}

struct Search<'a, O: Observer> {
    cfg: SearchConfig,
    data: SearchData<'a>,
    budget: Budget,
    next_id: u64,
    curves: Vec<CurvePoint>,
    observer: &'a mut O,
}

impl<O: Observer> Search<'_, O> {
    fn train(&mut self, c: &mut Candidate, epochs: usize, generation: usize, phase: Phase) -> Result<(), SearchError> {
        self.budget.charge(epochs)?;
        let mut rng = rng_from(self.cfg.seed, &[stream::SHUFFLE, c.id, c.epochs_trained as u64]);
        let history = train_epochs(
            &mut c.network,
            self.data.train,
            self.data.val,
            epochs,
            &self.cfg.train,
            &mut rng,
            c.epochs_trained,
        )
        .map_err(|e| match e {
            NetError::Divergence { epoch } => SearchError::Divergence {
                generation,
                candidate: c.id,
                epoch,
            },
            other => SearchError::Net(other),
        })?;
        let fresh = c.parent_id.is_some() && c.history.last().is_none_or(|p| p.candidate != c.id);
        for (i, r) in history.records().iter().enumerate() {
            let point = CurvePoint {
                epoch: r.epoch,
                candidate: c.id,
                val_accuracy: r.val_accuracy,
                param_count: r.param_count,
                mutation: (fresh && i == 0).then_some(c.mutation.kind),
            };
            c.history.push(point);
            self.curves.push(point);
        }
        let last = history.last().expect("at least one epoch");
        c.epochs_trained += epochs;
        c.val_accuracy = last.val_accuracy;
        c.param_count = last.param_count;
        self.observer.event(&Event::Train {
            generation,
            phase,
            candidate: c.id,
            epochs,
            epochs_trained: c.epochs_trained,
            val_accuracy: c.val_accuracy,
            param_count: c.param_count,
            spent: self.budget.spent_epochs,
        });
        Ok(())
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn root(&mut self, network: Network) -> Result<Candidate, SearchError> {
        let id = self.fresh_id();
        let v = evaluate(&network, self.data.val)?.accuracy;
        let p = network.param_count();
        Ok(Candidate {
            id,
            parent_id: None,
            mutation: Mutation::identity(),
            network,
            epochs_trained: 0,
            val_accuracy: v,
            param_count: p,
            parent_val_accuracy: v,
            parent_param_count: p,
            history: Vec::new(),
        })
    }

    fn spawn(&mut self, generation: usize, parents: &[Candidate], record: &mut GenerationRecord) -> Result<Vec<Candidate>, SearchError> {
        let mut children = Vec::new();
        for parent in parents {
            let mut rng = rng_from(self.cfg.seed, &[stream::MUTATION, generation as u64, parent.id]);
            for mutation in enumerate_mutations(&parent.network, &mut rng) {
                match apply_mutation(&parent.network, &mutation) {
                    Ok(network) => {
                        let id = self.fresh_id();
                        let v = evaluate(&network, self.data.val)?.accuracy;
                        let p = network.param_count();
                        self.observer.event(&Event::Spawn {
                            generation,
                            candidate: id,
                            parent: parent.id,
                            mutation,
                            param_count: p,
                            val_accuracy: v,
                        });
                        record.offspring.push(OffspringRecord {
                            parent: parent.id,
                            mutation,
                            id: Some(id),
                            param_count: Some(p),
                            rejected: None,
                        });
                        children.push(Candidate {
                            id,
                            parent_id: Some(parent.id),
                            mutation,
                            network,
                            epochs_trained: parent.epochs_trained,
                            val_accuracy: v,
                            param_count: p,
                            parent_val_accuracy: parent.val_accuracy,
                            parent_param_count: parent.param_count,
                            history: parent.history.clone(),
                        });
                    }
                    Err(e) => {
                        let reason = e.to_string();
                        self.observer.event(&Event::Reject {
                            generation,
                            parent: parent.id,
                            mutation,
                            reason: reason.clone(),
                        });
                        record.offspring.push(OffspringRecord {
                            parent: parent.id,
                            mutation,
                            id: None,
                            param_count: None,
                            rejected: Some(reason),
                        });
                    }
                }
            }
        }
        Ok(children)
    }

    /// Pairwise elimination until `target` candidates remain. Every
    /// survivor of a round, lucky tickets included, trains first.
    #[allow(clippy::too_many_arguments)]
    fn bracket(
        &mut self,
        mut pool: Vec<Candidate>,
        target: usize,
        alpha: f64,
        generation: usize,
        phase: Phase,
        kind: Option<MutationKind>,
        rng: &mut RunRng,
        record: &mut GenerationRecord,
    ) -> Result<Vec<Candidate>, SearchError> {
        if pool.len() <= target && target > 1 {
            return Ok(pool);
        }
        let epochs = self.cfg.bracket_epochs;
        let mut round = 0;
        loop {
            round += 1;
            for c in pool.iter_mut() {
                self.train(c, epochs, generation, phase)?;
            }
            if pool.len() <= target {
                return Ok(pool);
            }
            pool.shuffle(rng);
            let m = pool.len();
            let pairs = (m / 2).min(m - target);
            let mut next = Vec::with_capacity(m - pairs);
            let mut rest = pool.into_iter();
            for _ in 0..pairs {
                let a = rest.next().expect("pair member");
                let b = rest.next().expect("pair member");
                let (sa, sb) = (a.score(alpha), b.score(alpha));
                let a_wins = match self.cfg.mode {
                    SearchMode::Random => rng.random_bool(0.5),
                    _ => beats((&a, &sa), (&b, &sb)),
                };
                let (w, ws, l, ls) = if a_wins { (a, sa, b, sb) } else { (b, sb, a, sa) };
                let pair = PairRecord {
                    generation,
                    phase,
                    round,
                    kind,
                    winner: w.id,
                    loser: l.id,
                    winner_kind: w.mutation.kind,
                    loser_kind: l.mutation.kind,
                    winner_score: ws,
                    loser_score: ls,
                };
                self.observer.event(&Event::Pair(pair.clone()));
                record.pairs.push(pair);
                next.push(w);
            }
            for lucky in rest {
                self.observer.event(&Event::Lucky {
                    generation,
                    phase,
                    round,
                    candidate: lucky.id,
                });
                record.lucky.push(lucky.id);
                next.push(lucky);
            }
            pool = next;
            if pool.len() <= target {
                return Ok(pool);
            }
        }
    }
}

/// Higher score wins; ties go to fewer parameters, then the lower id.
fn beats(a: (&Candidate, &FitnessScore), b: (&Candidate, &FitnessScore)) -> bool {
    let key = |c: &Candidate, s: &FitnessScore| (s.s, std::cmp::Reverse(c.param_count), std::cmp::Reverse(c.id));
    let (ka, kb) = (key(a.0, a.1), key(b.0, b.1));
    ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.cmp(&kb.2)).is_ge()
}

/// `alpha = 1`: highest validation accuracy. Otherwise the highest fitness
/// measured against the starting network's statistics. Ties go to fewer
/// parameters, then the lower id.
pub fn final_selection(parents: &[Candidate], alpha: f64, start: Stats) -> (usize, FitnessScore) {
    assert!(!parents.is_empty(), "final selection needs candidates");
    let scored: Vec<FitnessScore> = parents
        .iter()
        .map(|c| score(c.val_accuracy, c.param_count, start.val_accuracy, start.param_count, alpha))
        .collect();
    let mut best = 0;
    for i in 1..parents.len() {
        if beats((&parents[i], &scored[i]), (&parents[best], &scored[best])) {
            best = i;
        }
    }
    (best, scored[best])
}

fn check_data(net: &Network, data: &SearchData<'_>) -> Result<(), SearchError> {
    for d in [Some(data.train), Some(data.val), data.test].into_iter().flatten() {
        if d.is_empty() {
            return Err(SearchError::Data("empty dataset".into()));
        }
        if d.sample_shape() != net.input_shape {
            return Err(SearchError::Data(format!(
                "samples have shape {:?}, network expects {:?}",
                d.sample_shape().dims(),
                net.input_shape.dims()
            )));
        }
        if d.num_classes > net.num_classes {
            return Err(SearchError::Data(format!(
                "data has {} classes, network outputs {}",
                d.num_classes, net.num_classes
            )));
        }
    }
    Ok(())
}

/// Run a full search (or the baseline / random variants) from `start`.
pub fn run<O: Observer>(cfg: &SearchConfig, start: Network, data: SearchData<'_>, observer: &mut O) -> Result<RunResult, SearchError> {
    cfg.validate()?;
    check_data(&start, &data)?;
    let total = match cfg.mode {
        SearchMode::Baseline => cfg.baseline_epochs,
        _ => cfg.budget,
    };
    let mut search = Search {
        cfg: *cfg,
        data,
        budget: Budget::new(total),
        next_id: 0,
        curves: Vec::new(),
        observer,
    };
    let mut t0 = search.root(start)?;

    if cfg.mode == SearchMode::Baseline {
        search.train(&mut t0, cfg.baseline_epochs, 0, Phase::Baseline)?;
        let start_stats = Stats {
            val_accuracy: t0.val_accuracy,
            param_count: t0.param_count,
        };
        return finish(search, vec![t0], start_stats, Vec::new());
    }

    search.train(&mut t0, cfg.warm_start_epochs, 0, Phase::WarmStart)?;
    let start_stats = Stats {
        val_accuracy: t0.val_accuracy,
        param_count: t0.param_count,
    };
    let mut parents = vec![t0];
    let mut generations = Vec::new();
    for generation in 1.. {
        let mut record = GenerationRecord {
            index: generation,
            parent_ids: parents.iter().map(|p| p.id).collect(),
            offspring: Vec::new(),
            pairs: Vec::new(),
            lucky: Vec::new(),
            kind_winners: Vec::new(),
            winners: Vec::new(),
        };
        let children = search.spawn(generation, &parents, &mut record)?;
        let mut by_kind: BTreeMap<MutationKind, Vec<Candidate>> = BTreeMap::new();
        for c in children {
            by_kind.entry(c.mutation.kind).or_default().push(c);
        }
        let cycle_cost = cfg.bracket_epochs
            * (by_kind.values().map(|pool| bracket_cost(pool.len(), 1)).sum::<usize>()
                + bracket_cost(by_kind.len(), cfg.n_winners));
        if by_kind.is_empty() || cycle_cost > search.budget.remaining() {
            search.observer.event(&Event::BudgetStop {
                generation,
                remaining: search.budget.remaining(),
                cycle_cost,
            });
            break;
        }
        let mut rng = rng_from(cfg.seed, &[stream::SEARCH, generation as u64]);
        let mut kind_winners = Vec::with_capacity(by_kind.len());
        for (kind, pool) in by_kind {
            let mut won = search.bracket(pool, 1, 1.0, generation, Phase::Phase1, Some(kind), &mut rng, &mut record)?;
            let w = won.pop().expect("bracket winner");
            record.kind_winners.push((kind, w.id));
            kind_winners.push(w);
        }
        let winners = search.bracket(
            kind_winners,
            cfg.n_winners,
            cfg.alpha,
            generation,
            Phase::Phase2,
            None,
            &mut rng,
            &mut record,
        )?;
        record.winners = winners.iter().map(|w| w.id).collect();
        search.observer.event(&Event::Generation {
            index: generation,
            parents: record.parent_ids.clone(),
            kind_winners: record.kind_winners.clone(),
            winners: record.winners.clone(),
            spent: search.budget.spent_epochs,
        });
        generations.push(record);
        parents = winners;
    }

    let share = search.budget.remaining() / parents.len();
    if share > 0 {
        for p in parents.iter_mut() {
            search.train(p, share, generations.len(), Phase::Final)?;
        }
    }
    finish(search, parents, start_stats, generations)
}

fn finish<O: Observer>(
    search: Search<'_, O>,
    parents: Vec<Candidate>,
    start: Stats,
    generations: Vec<GenerationRecord>,
) -> Result<RunResult, SearchError> {
    let cfg = search.cfg;
    let (index, fitness) = match cfg.mode {
        SearchMode::Random => {
            let mut rng = rng_from(cfg.seed, &[stream::SEARCH, u64::MAX]);
            let i = rng.random_range(0..parents.len());
            let c = &parents[i];
            (i, score(c.val_accuracy, c.param_count, start.val_accuracy, start.param_count, cfg.alpha))
        }
        _ => final_selection(&parents, cfg.alpha, start),
    };
    let winner = parents.into_iter().nth(index).expect("selected parent");
    search.observer.event(&Event::Final {
        candidate: winner.id,
        val_accuracy: winner.val_accuracy,
        param_count: winner.param_count,
        epochs_trained: winner.epochs_trained,
        score: fitness,
    });
    let test_accuracy = match search.data.test {
        Some(t) => Some(evaluate(&winner.network, t)?.accuracy),
        None => None,
    };
    Ok(RunResult {
        winner,
        start,
        generations,
        curves: search.curves,
        budget: search.budget,
        test_accuracy,
    })
}
