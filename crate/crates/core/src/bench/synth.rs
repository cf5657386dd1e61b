// SPDX-License-Identifier: Apache-2.0

//! Synthetic run-time logs built from a pool of fault-free line patterns.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymptomProfile {
    Clean,
    DirectSymptom,
    IndirectSymptom,
}

impl SymptomProfile {
    pub fn label(self) -> &'static str {
        match self {
            SymptomProfile::Clean => "clean",
            SymptomProfile::DirectSymptom => "direct",
            SymptomProfile::IndirectSymptom => "indirect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(SymptomProfile::Clean),
            "direct" => Some(SymptomProfile::DirectSymptom),
            "indirect" => Some(SymptomProfile::IndirectSymptom),
            _ => None,
        }
    }
}

/// Line patterns as (component, level, message). `{n}` is a random number,
/// `{ip}` a dotted quad. Patterns vary only in those slots, so every pattern
/// mines to exactly one template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    pub patterns: Vec<(String, String, String)>,
}

const HDFS_NN: &str = "org.apache.hadoop.hdfs.server.namenode.FSNamesystem";
const HDFS_DN: &str = "org.apache.hadoop.hdfs.server.datanode.DataNode";
const MR_TASK: &str = "org.apache.hadoop.mapred.Task";
const MR_MERGER: &str = "org.apache.hadoop.mapred.Merger";
const MR_MAPTASK: &str = "org.apache.hadoop.mapred.MapTask";
const MR_JOB: &str = "org.apache.hadoop.mapreduce.Job";
const YARN_RM: &str = "org.apache.hadoop.yarn.server.resourcemanager.scheduler.SchedulerNode";
const YARN_NM: &str = "org.apache.hadoop.yarn.server.nodemanager.containermanager.container.ContainerImpl";
const YARN_MON: &str = "org.apache.hadoop.yarn.server.nodemanager.containermanager.monitor.ContainersMonitorImpl";

impl Default for TemplatePool {
    fn default() -> Self {
        let p = |c: &str, l: &str, m: &str| (c.to_string(), l.to_string(), m.to_string());
        Self {
            patterns: vec![
                p(HDFS_NN, "INFO", "Roll Edit Log from {ip}"),
                p(HDFS_NN, "INFO", "Checkpoint done. New Image Size: {n}"),
                p(HDFS_DN, "INFO", "Receiving block blk_{n}_{n} src: /{ip}:{n} dest: /{ip}:{n}"),
                p(HDFS_DN, "INFO", "PacketResponder: BP-{n}-{ip}-{n}:blk_{n}_{n}, type=LAST_IN_PIPELINE terminating"),
                p(MR_TASK, "INFO", "Task attempt_{n}_{n}_m_{n}_{n} is done. And is in the process of committing"),
                p(MR_TASK, "INFO", "Final Counters for attempt_{n}_{n}_m_{n}_{n}: Counters: {n}"),
                p(MR_MAPTASK, "INFO", "Starting flush of map output"),
                p(MR_MAPTASK, "INFO", "Spilling map output"),
                p(MR_MAPTASK, "INFO", "Finished spill {n}"),
                p(MR_MERGER, "INFO", "Merging {n} sorted segments"),
                p(MR_MERGER, "INFO", "Down to the last merge-pass, with {n} segments left of total size: {n} bytes"),
                p(MR_JOB, "INFO", "map {n}% reduce {n}%"),
                p(MR_JOB, "INFO", "Job job_{n}_{n} completed successfully"),
                p(YARN_RM, "INFO", "Assigned container container_{n}_{n}_{n}_{n} of capacity <memory:{n}, vCores:{n}> on host node{n}:{n}"),
                p(YARN_NM, "INFO", "Container container_{n}_{n}_{n}_{n} transitioned from LOCALIZED to RUNNING"),
                p(YARN_MON, "INFO", "Memory usage of ProcessTree {n} for container-id container_{n}_{n}_{n}_{n}: {n} MB of {n} GB physical memory used"),
            ],
        }
    }
}

/// Renders `{n}` and `{ip}` slots. `digits` restricts the digit alphabet.
fn fill(pattern: &str, rng: &mut impl Rng, digits: &[u8]) -> String {
    let number = |rng: &mut dyn rand::RngCore| -> String {
        let len = rng.random_range(1..=5);
        (0..len).map(|_| *digits.choose(rng).expect("digits") as char).collect()
    };
    let mut out = String::with_capacity(pattern.len() + 16);
    let mut rest = pattern;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("{n}") {
            out.push_str(&number(rng));
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{ip}") {
            let parts: Vec<String> = (0..4).map(|_| number(rng).chars().take(3).collect()).collect();
            out.push_str(&parts.join("."));
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

const ALL_DIGITS: &[u8] = b"0123456789";
const NONZERO_DIGITS: &[u8] = b"123456789";

fn header(i: usize, level: &str, component: &str) -> String {
    format!("2024-05-06 10:{:02}:{:02},{:03} {level} {component}: ", (i / 60) % 60, i % 60, (i * 37) % 1000)
}

fn pool_line(pool: &TemplatePool, i: usize, rng: &mut impl Rng) -> String {
    let (c, l, m) = pool.patterns.choose(rng).expect("non-empty pool");
    format!("{}{}", header(i, l, c), fill(m, rng, ALL_DIGITS))
}

/// A fault-free corpus covering every pool pattern at least twice.
pub fn baseline_log(pool: &TemplatePool, rng: &mut impl Rng) -> String {
    let mut out = String::new();
    let mut i = 0;
    for _ in 0..2 {
        for (c, l, m) in &pool.patterns {
            out.push_str(&header(i, l, c));
            out.push_str(&fill(m, rng, ALL_DIGITS));
            out.push('\n');
            i += 1;
        }
    }
    for _ in 0..pool.patterns.len() {
        out.push_str(&pool_line(pool, i, rng));
        out.push('\n');
        i += 1;
    }
    out
}

const DIRECT_MESSAGES: &[&str] = &[
    "Error initializing {name}: value {value} rejected after {n} attempts",
    "Failed to apply {name} on node{n}:{n} because of an error",
    "Error while validating configuration property {name} at /{ip}:{n}",
];

const INDIRECT_MESSAGES: &[&str] = &[
    "Unexpected exception while running child",
    "Caught exception in main loop, shutting down",
    "Exception in thread worker{n}",
    "Uncaught exception in service loop",
    "Unhandled exception on executor{n}",
];

const EXCEPTIONS: &[&str] = &[
    "java.lang.NullPointerException",
    "java.lang.IllegalStateException",
    "java.lang.ArithmeticException",
    "java.lang.ArrayIndexOutOfBoundsException",
];

const COMPONENTS: &[&str] = &[
    "org.apache.hadoop.mapred.YarnChild",
    "org.apache.hadoop.yarn.server.nodemanager.NodeManager",
    "org.apache.hadoop.util.RunJar",
    "org.eclipse.jetty.server.Server",
    "Main",
];

const FRAMES: &[&str] = &[
    "org.apache.hadoop.util.Shell.runCommand(Shell.java:{n})",
    "org.apache.hadoop.util.RunJar.main(RunJar.java:{n})",
    "org.apache.hadoop.ipc.Server$Handler.run(Server.java:{n})",
    "org.apache.hadoop.ipc.Client.call(Client.java:{n})",
    "org.apache.hadoop.security.UserGroupInformation.doAs(UserGroupInformation.java:{n})",
    "org.apache.hadoop.mapred.YarnChild.main(YarnChild.java:{n})",
    "org.apache.hadoop.mapred.MapTask.run(MapTask.java:{n})",
    "org.apache.hadoop.hdfs.DFSOutputStream.close(DFSOutputStream.java:{n})",
    "org.apache.hadoop.yarn.event.AsyncDispatcher.dispatch(AsyncDispatcher.java:{n})",
    "org.apache.hadoop.service.AbstractService.start(AbstractService.java:{n})",
    "java.util.concurrent.ThreadPoolExecutor.runWorker(ThreadPoolExecutor.java:{n})",
    "java.util.concurrent.FutureTask.run(FutureTask.java:{n})",
    "java.lang.Thread.run(Thread.java:{n})",
    "java.security.AccessController.doPrivileged(Native Method)",
    "javax.security.auth.Subject.doAs(Subject.java:{n})",
    "sun.reflect.NativeMethodAccessorImpl.invoke0(Native Method)",
];

/// Lowercased alphanumeric runs, the granularity of name matching.
fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Whether `text` mentions the trigger: a name segment as a whole token, the
/// dotted name, or the raw value. Applied to message and stack text; the
/// timestamp header is not part of what inference reads.
pub(crate) fn mentions_trigger(text: &str, truth: &GroundTruth) -> bool {
    let property = truth.trigger.property.to_lowercase();
    let segments: Vec<&str> = property.split('.').filter(|s| !s.is_empty()).collect();
    let lower = text.to_lowercase();
    lower.contains(&property)
        || tokens(text).any(|t| segments.contains(&t.as_str()))
        || (!truth.trigger.value.is_empty() && text.contains(&truth.trigger.value))
}

fn indirect_block(truth: &GroundTruth, i: usize, rng: &mut impl Rng) -> String {
    let clean = |s: &str| !mentions_trigger(s, truth);
    let mut messages: Vec<&str> = INDIRECT_MESSAGES.iter().copied().filter(|m| clean(m)).collect();
    let mut exceptions: Vec<&str> = EXCEPTIONS.iter().copied().filter(|e| clean(e)).collect();
    let mut frames: Vec<&str> = FRAMES.iter().copied().filter(|f| clean(f)).collect();
    if messages.is_empty() {
        messages.push("Unexpected exception");
    }
    if exceptions.is_empty() {
        exceptions.push("java.lang.RuntimeException");
    }
    let component = COMPONENTS.iter().copied().find(|c| clean(c)).unwrap_or("Launcher");
    messages.shuffle(rng);
    frames.shuffle(rng);
    let depth = rng.random_range(3..=6).min(frames.len());
    // Any digit of the value left out of the alphabet keeps the value out of
    // every generated number.
    let banned = truth.trigger.value.chars().find(char::is_ascii_digit);
    let digits: Vec<u8> = NONZERO_DIGITS.iter().copied().filter(|d| Some(*d as char) != banned).collect();
    for attempt in 0..32 {
        let msg = fill(messages[attempt % messages.len()], rng, &digits);
        let exc = exceptions.choose(rng).expect("exceptions");
        let mut body = format!("{msg}: {exc}\n");
        for f in &frames[..depth] {
            body.push_str("\tat ");
            body.push_str(&fill(f, rng, &digits));
            body.push('\n');
        }
        if clean(&body) {
            return format!("{}{body}", header(i, "ERROR", component));
        }
    }
    format!("{}Unexpected exception: java.lang.RuntimeException\n", header(i, "ERROR", component))
}

fn direct_line(truth: &GroundTruth, i: usize, rng: &mut impl Rng) -> String {
    let pattern = DIRECT_MESSAGES.choose(rng).expect("direct messages");
    let value = if truth.trigger.value.is_empty() { "(empty)" } else { truth.trigger.value.as_str() };
    let msg = fill(pattern, rng, ALL_DIGITS)
        .replace("{name}", &truth.trigger.property)
        .replace("{value}", value);
    format!("{}{msg}\n", header(i, "ERROR", "org.apache.hadoop.conf.Configuration"))
}

/// A corpus of 20 to 40 pool lines, plus one symptom block for the
/// non-clean profiles at a random position.
pub fn gen_synthetic_logs(
    truth: &GroundTruth,
    profile: SymptomProfile,
    pool: &TemplatePool,
    rng: &mut impl Rng,
) -> String {
    let total = rng.random_range(20..=40);
    let symptom_at = rng.random_range(1..total);
    let mut out = String::new();
    for i in 0..total {
        if i == symptom_at {
            match profile {
                SymptomProfile::Clean => {}
                SymptomProfile::DirectSymptom => out.push_str(&direct_line(truth, i, rng)),
                SymptomProfile::IndirectSymptom => out.push_str(&indirect_block(truth, i, rng)),
            }
        }
        out.push_str(&pool_line(pool, i, rng));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{MutationStrategy, ValueType};
    use crate::config::{ConfigEntry, EntrySource};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth(property: &str, value: &str) -> GroundTruth {
        GroundTruth {
            trigger: ConfigEntry::new(property, value, EntrySource::UserDefined),
            strategy: MutationStrategy::numeric(ValueType::Zero),
            decoys: vec![],
            decoy_strategies: vec![],
        }
    }

    #[test]
    fn pool_routes_are_distinct() {
        let pool = TemplatePool::default();
        let mut routes = std::collections::HashSet::new();
        for (_, _, m) in &pool.patterns {
            let toks: Vec<&str> = m.split_whitespace().collect();
            assert!(routes.insert((toks.len(), toks[0])), "{m}");
        }
    }

    #[test]
    fn direct_line_names_trigger() {
        let t = truth("mapred.local.dir", "0");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logs = gen_synthetic_logs(&t, SymptomProfile::DirectSymptom, &TemplatePool::default(), &mut rng);
        let line = logs.lines().find(|l| l.contains("ERROR")).unwrap();
        assert!(line.to_lowercase().contains("error"));
        assert!(line.contains("mapred.local.dir"));
    }

    #[test]
    fn indirect_block_avoids_trigger() {
        let t = truth("hadoop.security.groups.cache.secs", "1");
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logs = gen_synthetic_logs(&t, SymptomProfile::IndirectSymptom, &TemplatePool::default(), &mut rng);
            let block: Vec<&str> = logs
                .lines()
                .filter_map(|l| match l.split_once(" ERROR ") {
                    Some((_, rest)) => rest.split_once(": ").map(|(_, m)| m),
                    None => l.starts_with('\t').then_some(l),
                })
                .collect();
            assert!(block.len() >= 4, "{logs}");
            for l in block {
                assert!(!mentions_trigger(l, &t), "{l}");
            }
        }
    }

    #[test]
    fn clean_has_no_error_lines() {
        let t = truth("a.b", "1");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logs = gen_synthetic_logs(&t, SymptomProfile::Clean, &TemplatePool::default(), &mut rng);
        assert!(logs.lines().all(|l| l.contains(" INFO ")));
    }
}
