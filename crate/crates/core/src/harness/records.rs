use serde::Serialize;

pub const RECORD_HEADER: &str =
    "task,adapter,n,blocks,block_rank,params,flops,seed,steps,final_loss,recovery_error,wall_ms";

/// One training trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub task: String,
    pub adapter: String,
    pub n: usize,
    pub blocks: usize,
    pub block_rank: usize,
    pub params: usize,
    pub flops: usize,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub recovery_error: f64,
    pub wall_ms: u64,
    /// `(step, loss)` every `LOG_EVERY` steps plus the final full-data loss.
    pub loss_curve: Vec<(usize, f64)>,
}

impl RunRecord {
    /// Floats use the shortest representation that parses back exactly.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:?},{:?},{}",
            self.task,
            self.adapter,
            self.n,
            self.blocks,
            self.block_rank,
            self.params,
            self.flops,
            self.seed,
            self.steps,
            self.final_loss,
            self.recovery_error,
            self.wall_ms
        )
    }
}

pub fn format_records<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
