//! Synthetic movie-recommendation corpus in the ReDial release format.
//!
//! Movies come in small clusters that share a genre, a director and a lead
//! actor. Two conversation shapes are generated:
//!
//! * warm: the seeker names a liked movie from one cluster, then drifts to
//!   another genre and names two movies from a second cluster; the
//!   recommender answers with an unmentioned sibling of the most recent
//!   cluster, so later mentions carry the signal;
//! * cold start: the seeker only describes a mood; the recommender picks a
//!   popular movie of the matching genre.
//!
//! The generated world also provides the knowledge-graph triples and an
//! alias list, so a full preprocessing pipeline can run on it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{corpus_from_records, write_redial_record, LoadedCorpus, RedialMessage, RedialRecord};
use crate::kg::{AliasIndex, KnowledgeGraph};
use crate::error::{CrsError, Result};

const GENRES: [(&str, [&str; 3]); 8] = [
    ("Horror", ["scary", "creepy", "spooky"]),
    ("Comedy", ["funny", "silly", "hilarious"]),
    ("Romance", ["romantic", "sweet", "heartfelt"]),
    ("Action", ["explosive", "intense", "fast"]),
    ("Documentary", ["educational", "informative", "factual"]),
    ("Animation", ["animated", "colorful", "cartoonish"]),
    ("Thriller", ["suspenseful", "tense", "twisty"]),
    ("Drama", ["serious", "emotional", "moving"]),
];

const TITLE_ADJ: [&str; 24] = [
    "Silent", "Crimson", "Hidden", "Broken", "Golden", "Last", "Frozen", "Wild", "Lonely", "Burning",
    "Secret", "Distant", "Hollow", "Bright", "Restless", "Iron", "Velvet", "Shattered", "Pale",
    "Electric", "Lucky", "Midnight", "Savage", "Gentle",
];

const TITLE_NOUN: [&str; 24] = [
    "Harbor", "Garden", "River", "Kingdom", "Mirror", "Highway", "Summer", "Promise", "Island",
    "Shadow", "Orchard", "Engine", "Letter", "Canyon", "Lantern", "Winter", "Station", "Voyage",
    "Desert", "Circus", "Signal", "Forest", "Empire", "Passage",
];

const FIRST: [&str; 16] = [
    "Ada", "Boris", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Ines", "Jonas", "Kira",
    "Leon", "Mara", "Nico", "Olga", "Pavel",
];

const LAST: [&str; 16] = [
    "Hart", "Voss", "Lind", "Moreau", "Quill", "Stroud", "Baird", "Crane", "Dunmore", "Ellery",
    "Faulk", "Garrow", "Hale", "Ives", "Keane", "Lorne",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub conversations: usize,
    pub clusters_per_genre: usize,
    pub cluster_size: usize,
    pub actors_per_genre: usize,
    pub cold_start_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            conversations: 500,
            clusters_per_genre: 6,
            cluster_size: 4,
            actors_per_genre: 5,
            cold_start_fraction: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMovie {
    pub id: String,
    pub title: String,
    pub year: u32,
    pub genre: usize,
    pub cluster: usize,
    pub director: String,
    pub actors: Vec<String>,
    pub popularity: f64,
}

impl SyntheticMovie {
    pub fn display_name(&self) -> String {
        format!("{} ({})", self.title, self.year)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub movies: Vec<SyntheticMovie>,
    pub records: Vec<RedialRecord>,
    pub triples: Vec<(String, String, String)>,
    /// `(surface form, entity name)`.
    pub aliases: Vec<(String, String)>,
}

impl SyntheticCorpus {
    /// Writes `conversations.jsonl`, `kg.tsv` and `aliases.tsv`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CrsError::io(dir, e))?;
        let mut conv = String::new();
        for r in &self.records {
            conv.push_str(&write_redial_record(r));
            conv.push('\n');
        }
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| CrsError::io(&p, e))
        };
        write("conversations.jsonl", conv)?;
        write(
            "kg.tsv",
            self.triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect(),
        )?;
        write(
            "aliases.tsv",
            self.aliases.iter().map(|(a, e)| format!("{a}\t{e}\n")).collect(),
        )
    }
}

impl SyntheticCorpus {
    /// The conversations as a loaded ReDial corpus.
    pub fn loaded(&self) -> LoadedCorpus {
        corpus_from_records(&self.records)
    }

    pub fn knowledge_graph(&self, inverse: bool) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(
            self.triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
            inverse,
        )
    }

    /// Alias index over `kg`; aliases naming unknown entities are dropped.
    pub fn alias_index(&self, kg: &KnowledgeGraph) -> AliasIndex {
        AliasIndex::from_pairs(
            self.aliases
                .iter()
                .filter_map(|(a, e)| kg.entity_id(e).map(|id| (a.as_str(), id))),
        )
    }
}

struct World {
    movies: Vec<SyntheticMovie>,
    /// Movie indices per cluster, most popular first.
    clusters: Vec<Vec<usize>>,
    /// Cluster indices per genre.
    genre_clusters: Vec<Vec<usize>>,
    genre_actors: Vec<Vec<String>>,
}

fn build_world(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> World {
    let mut names: Vec<String> = FIRST
        .iter()
        .flat_map(|f| LAST.iter().map(move |l| format!("{f} {l}")))
        .collect();
    names.shuffle(rng);
    let mut names = names.into_iter();
    let mut titles: Vec<String> = TITLE_ADJ
        .iter()
        .flat_map(|a| TITLE_NOUN.iter().map(move |n| format!("The {a} {n}")))
        .collect();
    titles.shuffle(rng);
    let mut titles = titles.into_iter();

    let genre_actors: Vec<Vec<String>> = (0..GENRES.len())
        .map(|_| (0..cfg.actors_per_genre).filter_map(|_| names.next()).collect())
        .collect();
    let all_actors: Vec<String> = genre_actors.iter().flatten().cloned().collect();

    let mut movies = Vec::new();
    let mut clusters = Vec::new();
    let mut genre_clusters = vec![Vec::new(); GENRES.len()];
    for g in 0..GENRES.len() {
        for _ in 0..cfg.clusters_per_genre {
            let cluster = clusters.len();
            let director = names.next().unwrap_or_else(|| format!("Director {cluster}"));
            let lead = genre_actors[g].choose(rng).cloned().unwrap_or_default();
            let mut members = Vec::new();
            for _ in 0..cfg.cluster_size {
                let idx = movies.len();
                let mut actors = vec![lead.clone()];
                if let Some(extra) = all_actors.choose(rng) {
                    if *extra != lead {
                        actors.push(extra.clone());
                    }
                }
                movies.push(SyntheticMovie {
                    id: (100_000 + idx).to_string(),
                    title: titles.next().unwrap_or_else(|| format!("Film {idx}")),
                    year: rng.random_range(1970..2021),
                    genre: g,
                    cluster,
                    director: director.clone(),
                    actors,
                    // Heavy-tailed popularity.
                    popularity: 1.0 / (1.0 + rng.random_range(0.0..8.0f64)).powf(1.5),
                });
                members.push(idx);
            }
            members.sort_by(|a, b| movies[*b].popularity.total_cmp(&movies[*a].popularity));
            clusters.push(members);
            genre_clusters[g].push(cluster);
        }
    }
    World {
        movies,
        clusters,
        genre_clusters,
        genre_actors,
    }
}

struct Dialogue {
    turns: Vec<(bool, String)>,
    mentioned: Vec<usize>,
}

impl Dialogue {
    fn say(&mut self, seeker: bool, text: String) {
        self.turns.push((seeker, text));
    }
}

fn mention(world: &World, m: usize, d: &mut Dialogue) -> String {
    d.mentioned.push(m);
    format!("@{}", world.movies[m].id)
}

fn pick_popular(world: &World, pool: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = pool.iter().map(|&m| world.movies[m].popularity).collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    pool[dist.sample(rng)]
}

fn warm_dialogue(world: &World, rng: &mut ChaCha8Rng) -> Dialogue {
    let mut d = Dialogue {
        turns: Vec::new(),
        mentioned: Vec::new(),
    };
    let g1 = rng.random_range(0..GENRES.len());
    let mut g2 = rng.random_range(0..GENRES.len() - 1);
    if g2 >= g1 {
        g2 += 1;
    }
    let c1 = *world.genre_clusters[g1].choose(rng).unwrap();
    let c2 = *world.genre_clusters[g2].choose(rng).unwrap();

    let mut first = world.clusters[c1].clone();
    first.shuffle(rng);
    let greet = ["hi !", "hello !", "hey there !"].choose(rng).unwrap();
    let liked = mention(world, first[0], &mut d);
    let mood1 = GENRES[g1].1.choose(rng).unwrap();
    let opener = if rng.random_bool(0.5) {
        format!("{greet} i liked {liked} , it was {mood1} .")
    } else {
        format!("{greet} i enjoy {} movies like {liked} .", GENRES[g1].0.to_lowercase())
    };
    d.say(true, opener);
    let sib = mention(world, first[1], &mut d);
    d.say(false, format!("{} have you seen {sib} ?", ["nice !", "great choice .", "cool ."].choose(rng).unwrap()));

    let mut second = world.clusters[c2].clone();
    let a = second.remove(rng.random_range(0..second.len()));
    let b = second.remove(rng.random_range(0..second.len()));
    // The most popular remaining sibling is the answer.
    let target = second[0];
    let mood2 = GENRES[g2].1.choose(rng).unwrap();
    let (ma, mb) = (mention(world, a, &mut d), mention(world, b, &mut d));
    let drift = match rng.random_range(0..3) {
        0 => format!("not yet . lately i am into {mood2} stuff like {ma} and {mb} ."),
        1 => {
            let actor = &world.movies[a].actors[0];
            format!("maybe later . these days i want something {mood2} with {actor} , like {ma} or {mb} .")
        }
        _ => format!(
            "i have . but now i prefer {} , i loved {ma} and {mb} .",
            GENRES[g2].0.to_lowercase()
        ),
    };
    d.say(true, drift);
    let t = mention(world, target, &mut d);
    let pitch = match rng.random_range(0..3) {
        0 => format!("then you should watch {t} !"),
        1 => format!("you would like {t} , it is {mood2} too ."),
        _ => format!("try {t} , same director as {ma} ."),
    };
    d.say(false, pitch);
    d.say(true, ["thanks ! i will check it out .", "sounds great , thank you .", "cool , thanks !"].choose(rng).unwrap().to_string());
    d.say(false, ["enjoy ! bye .", "you are welcome !", "have fun !"].choose(rng).unwrap().to_string());
    d
}

fn cold_dialogue(world: &World, rng: &mut ChaCha8Rng) -> Dialogue {
    let mut d = Dialogue {
        turns: Vec::new(),
        mentioned: Vec::new(),
    };
    let g = rng.random_range(0..GENRES.len());
    let moods: Vec<&&str> = GENRES[g].1.choose_multiple(rng, 2).collect();
    let greet = ["hi !", "hello .", "hey !"].choose(rng).unwrap();
    d.say(
        true,
        match rng.random_range(0..2) {
            0 => format!("{greet} i want something {} and {} tonight .", moods[0], moods[1]),
            _ => format!("{greet} can you suggest a {} movie ? something {} .", moods[0], moods[1]),
        },
    );
    let pool: Vec<usize> = world.genre_clusters[g]
        .iter()
        .flat_map(|c| world.clusters[*c].iter().copied())
        .collect();
    let target = pick_popular(world, &pool, rng);
    let t = mention(world, target, &mut d);
    d.say(false, format!("{} {t} .", ["sure , try", "how about", "i recommend"].choose(rng).unwrap()));
    d.say(true, ["sounds good , thanks .", "ok i will watch it .", "great , thanks !"].choose(rng).unwrap().to_string());
    d.say(false, ["you are welcome !", "enjoy !", "have a nice evening ."].choose(rng).unwrap().to_string());
    d
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = build_world(cfg, &mut rng);

    let mut records = Vec::with_capacity(cfg.conversations);
    for i in 0..cfg.conversations {
        let d = if rng.random_bool(cfg.cold_start_fraction) {
            cold_dialogue(&world, &mut rng)
        } else {
            warm_dialogue(&world, &mut rng)
        };
        let (seeker, recommender) = (1000 + 2 * i as i64, 1001 + 2 * i as i64);
        let mut mentions = serde_json::Map::new();
        for &m in &d.mentioned {
            let movie = &world.movies[m];
            mentions.insert(movie.id.clone(), Value::String(movie.display_name()));
        }
        let messages = d
            .turns
            .into_iter()
            .enumerate()
            .map(|(k, (is_seeker, text))| RedialMessage {
                time_offset: 10 * k as i64,
                text,
                sender_worker_id: if is_seeker { seeker } else { recommender },
                message_id: (i * 100 + k) as i64,
            })
            .collect();
        records.push(RedialRecord {
            movie_mentions: Value::Object(mentions),
            respondent_questions: Value::Object(Default::default()),
            initiator_questions: Value::Object(Default::default()),
            messages,
            conversation_id: Value::String(format!("syn-{i}")),
            respondent_worker_id: recommender,
            initiator_worker_id: seeker,
        });
    }

    let mut triples = Vec::new();
    let mut aliases = Vec::new();
    for (g, (genre, _)) in GENRES.iter().enumerate() {
        aliases.push((genre.to_lowercase(), genre.to_string()));
        for actor in &world.genre_actors[g] {
            aliases.push((actor.to_lowercase(), actor.clone()));
        }
    }
    let mut directors = BTreeMap::new();
    for movie in &world.movies {
        let name = movie.display_name();
        triples.push((name.clone(), "genre".to_string(), GENRES[movie.genre].0.to_string()));
        triples.push((name.clone(), "director".to_string(), movie.director.clone()));
        for actor in &movie.actors {
            triples.push((name.clone(), "starring".to_string(), actor.clone()));
        }
        aliases.push((movie.title.to_lowercase(), name));
        directors.insert(movie.director.to_lowercase(), movie.director.clone());
    }
    aliases.extend(directors);

    SyntheticCorpus {
        movies: world.movies,
        records,
        triples,
        aliases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_redial;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            conversations: 20,
            ..Default::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        let lines = |c: &SyntheticCorpus| c.records.iter().map(write_redial_record).collect::<Vec<_>>();
        assert_eq!(lines(&a), lines(&b));
        assert_eq!(a.triples, b.triples);
    }

    #[test]
    fn output_loads_as_redial() {
        let cfg = SyntheticConfig {
            conversations: 30,
            ..Default::default()
        };
        let corpus = generate(&cfg);
        let dir = tempfile::tempdir().unwrap();
        corpus.write_to_dir(dir.path()).unwrap();
        let loaded = load_redial(dir.path().join("conversations.jsonl")).unwrap();
        assert_eq!(loaded.conversations.len(), 30);
        assert_eq!(loaded.skipped, 0);
        for conv in &loaded.conversations {
            let recommender_items: usize = conv
                .utterances
                .iter()
                .filter(|u| u.speaker == crate::corpus::Speaker::Recommender)
                .map(|u| u.item_mentions.len())
                .sum();
            assert!(recommender_items >= 1, "{}", conv.id);
        }
    }
}
