// SPDX-License-Identifier: Apache-2.0

//! Fixed-depth parse tree for log template mining.
//!
//! Messages are routed by token count, then by their leading tokens, down to a
//! leaf holding candidate clusters. A message joins the most similar cluster in
//! its leaf when the similarity reaches the configured threshold; otherwise it
//! starts a new cluster. Tokens containing digits are routed (and templated) as
//! wildcards.

use std::collections::HashMap;

use super::WILDCARD_TOKEN as WILDCARD;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Token {
    Wild,
    Lit(String),
}

impl Token {
    fn as_str(&self) -> &str {
        match self {
            Token::Wild => WILDCARD,
            Token::Lit(s) => s,
        }
    }
}

#[derive(Debug)]
pub(crate) struct Cluster {
    pub(crate) tokens: Vec<Token>,
    pub(crate) size: usize,
}

impl Cluster {
    pub(crate) fn pattern(&self) -> String {
        self.tokens
            .iter()
            .map(Token::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Fraction of positions whose literal token equals the sequence's, plus
    /// the number of wildcard positions for tie-breaking.
    fn similarity(&self, seq: &[Token]) -> (f64, usize) {
        if self.tokens.is_empty() {
            return (1.0, 0);
        }
        let mut same = 0usize;
        let mut params = 0usize;
        for (t, s) in self.tokens.iter().zip(seq) {
            match t {
                Token::Wild => params += 1,
                Token::Lit(_) if t == s => same += 1,
                Token::Lit(_) => {}
            }
        }
        (same as f64 / self.tokens.len() as f64, params)
    }

    fn absorb(&mut self, seq: &[Token]) {
        for (t, s) in self.tokens.iter_mut().zip(seq) {
            if *t != *s {
                *t = Token::Wild;
            }
        }
        self.size += 1;
    }
}

#[derive(Debug, Default)]
struct Node {
    children: HashMap<String, Node>,
    clusters: Vec<usize>,
}

#[derive(Debug)]
pub(crate) struct DrainTree {
    token_layers: usize,
    similarity: f64,
    max_children: usize,
    mask_digits: bool,
    by_length: HashMap<usize, Node>,
    pub(crate) clusters: Vec<Cluster>,
}

fn has_digit(s: &str) -> bool {
    s.bytes().any(|b| b.is_ascii_digit())
}

impl DrainTree {
    pub(crate) fn new(depth: usize, similarity: f64, max_children: usize, mask_digits: bool) -> Self {
        Self {
            token_layers: depth.saturating_sub(2),
            similarity,
            max_children: max_children.max(1),
            mask_digits,
            by_length: HashMap::new(),
            clusters: Vec::new(),
        }
    }

    fn to_sequence(&self, words: &[&str]) -> Vec<Token> {
        words
            .iter()
            .map(|w| {
                if *w == WILDCARD || (self.mask_digits && has_digit(w)) {
                    Token::Wild
                } else {
                    Token::Lit((*w).to_string())
                }
            })
            .collect()
    }

    /// Adds one message and returns the index of the cluster it joined.
    pub(crate) fn add(&mut self, words: &[&str]) -> usize {
        let seq = self.to_sequence(words);
        let found = self
            .search_leaf(&seq)
            .and_then(|leaf| self.best_cluster(leaf, &seq));
        match found {
            Some(idx) => {
                self.clusters[idx].absorb(&seq);
                idx
            }
            None => {
                let idx = self.clusters.len();
                self.clusters.push(Cluster { tokens: seq.clone(), size: 1 });
                self.insert(&seq, idx);
                idx
            }
        }
    }

    fn route_key(token: &Token) -> &str {
        match token {
            Token::Lit(s) if has_digit(s) => WILDCARD,
            _ => token.as_str(),
        }
    }

    fn search_leaf(&self, seq: &[Token]) -> Option<&[usize]> {
        let mut node = self.by_length.get(&seq.len())?;
        for token in seq.iter().take(self.token_layers) {
            let key = Self::route_key(token);
            node = match node.children.get(key) {
                Some(child) => child,
                None => node.children.get(WILDCARD)?,
            };
        }
        Some(&node.clusters)
    }

    fn best_cluster(&self, leaf: &[usize], seq: &[Token]) -> Option<usize> {
        let mut best: Option<(usize, f64, usize)> = None;
        for &idx in leaf {
            let (sim, params) = self.clusters[idx].similarity(seq);
            let better = match best {
                None => true,
                Some((_, bsim, bparams)) => sim > bsim || (sim == bsim && params > bparams),
            };
            if better {
                best = Some((idx, sim, params));
            }
        }
        best.filter(|(_, sim, _)| *sim >= self.similarity)
            .map(|(idx, _, _)| idx)
    }

    fn insert(&mut self, seq: &[Token], cluster: usize) {
        let max_children = self.max_children;
        let mut node = self.by_length.entry(seq.len()).or_default();
        for token in seq.iter().take(self.token_layers) {
            let key = Self::route_key(token);
            let next_key = if node.children.contains_key(key) {
                key.to_string()
            } else if key == WILDCARD {
                WILDCARD.to_string()
            } else if node.children.contains_key(WILDCARD) {
                if node.children.len() < max_children {
                    key.to_string()
                } else {
                    WILDCARD.to_string()
                }
            } else if node.children.len() + 1 < max_children {
                key.to_string()
            } else {
                WILDCARD.to_string()
            };
            node = node.children.entry(next_key).or_default();
        }
        node.clusters.push(cluster);
    }
}
