//! Seeded template grammar for a five-domain toy corpus.
//!
//! Taxi and train share their departure, destination and time slots, and
//! hotel, restaurant and attraction share area, price and name slots, with
//! the same surface phrases. That overlap is what lets a model trained
//! without one domain say anything about it.

use super::corpus::{slot_key, Corpus, Dialogue, SlotSchema, State, Turn};
use crate::rng::SeededRng;

pub const DOMAINS: [&str; 5] = ["attraction", "hotel", "restaurant", "taxi", "train"];

const PLACES: &[&str] = &[
    "cambridge",
    "ely",
    "london",
    "norwich",
    "stevenage",
    "peterborough",
    "bishops",
    "stansted",
    "leicester",
    "kings",
];
const TIMES: &[&str] = &[
    "07:15", "08:30", "09:45", "10:00", "11:30", "12:15", "13:45", "14:00", "15:30", "16:15",
    "17:45", "18:00",
];
const DAYS: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];
const AREAS: &[&str] = &["centre", "north", "south", "east", "west"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const STARS: &[&str] = &["2", "3", "4", "5"];
const FOODS: &[&str] = &["italian", "chinese", "indian", "french", "thai", "british"];
const TYPES: &[&str] = &["museum", "park", "theatre", "college", "gallery", "cinema"];
const HOTELS: &[&str] = &[
    "acorn",
    "alpha",
    "bridge",
    "carolina",
    "gonville",
    "lensfield",
];
const RESTAURANTS: &[&str] = &["bedouin", "meghna", "nandos", "zizzi", "yippee", "rajmahal"];
const ATTRACTIONS: &[&str] = &[
    "fitzwilliam",
    "kettles",
    "broughton",
    "castle",
    "cherry",
    "scudamores",
];

struct SlotSpec {
    slot: &'static str,
    description: &'static str,
    values: &'static [&'static str],
    categorical: bool,
    phrases: &'static [&'static str],
    question: &'static str,
}

const DEPARTURE: &[&str] = &["from {}", "leaving from {}", "departing from {}"];
const DESTINATION: &[&str] = &["to {}", "going to {}", "heading to {}"];
const LEAVE: &[&str] = &["leaving after {}", "departing at {}", "that leaves at {}"];
const ARRIVE: &[&str] = &["arriving by {}", "that arrives by {}", "to get there by {}"];
const AREA: &[&str] = &["in the {}", "in the {} of town", "located in the {}"];
const PRICE: &[&str] = &["in the {} price range", "that is {}", "something {}"];
const NAME: &[&str] = &["called {}", "named {}"];

fn specs(domain: &str) -> Vec<SlotSpec> {
    let travel = |what: &'static str| -> Vec<SlotSpec> {
        let d = |t: &'static str| -> &'static str {
            match (what, t) {
                ("taxi", "departure") => "departure location of the taxi",
                ("taxi", "destination") => "destination of the taxi",
                ("taxi", "leaveat") => "leaving time of the taxi",
                ("taxi", "arriveby") => "arrival time of the taxi",
                (_, "departure") => "departure location of the train",
                (_, "destination") => "destination of the train",
                (_, "leaveat") => "leaving time of the train",
                _ => "arrival time of the train",
            }
        };
        vec![
            SlotSpec {
                slot: "departure",
                description: d("departure"),
                values: PLACES,
                categorical: false,
                phrases: DEPARTURE,
                question: "where are you leaving from ?",
            },
            SlotSpec {
                slot: "destination",
                description: d("destination"),
                values: PLACES,
                categorical: false,
                phrases: DESTINATION,
                question: "where are you going ?",
            },
            SlotSpec {
                slot: "leaveat",
                description: d("leaveat"),
                values: TIMES,
                categorical: false,
                phrases: LEAVE,
                question: "when would you like to leave ?",
            },
            SlotSpec {
                slot: "arriveby",
                description: d("arriveby"),
                values: TIMES,
                categorical: false,
                phrases: ARRIVE,
                question: "when do you need to arrive ?",
            },
        ]
    };
    let area = |description| SlotSpec {
        slot: "area",
        description,
        values: AREAS,
        categorical: true,
        phrases: AREA,
        question: "which part of town ?",
    };
    let price = |description| SlotSpec {
        slot: "pricerange",
        description,
        values: PRICES,
        categorical: true,
        phrases: PRICE,
        question: "what price range ?",
    };
    let name = |description, values| SlotSpec {
        slot: "name",
        description,
        values,
        categorical: false,
        phrases: NAME,
        question: "do you have a name in mind ?",
    };
    match domain {
        "taxi" => travel("taxi"),
        "train" => {
            let mut v = travel("train");
            v.push(SlotSpec {
                slot: "day",
                description: "day of the train journey",
                values: DAYS,
                categorical: true,
                phrases: &["on {}", "for {}"],
                question: "what day are you travelling ?",
            });
            v
        }
        "hotel" => vec![
            area("area of the hotel"),
            price("price budget of the hotel"),
            SlotSpec {
                slot: "stars",
                description: "star rating of the hotel",
                values: STARS,
                categorical: true,
                phrases: &["with {} stars", "rated {} stars"],
                question: "how many stars ?",
            },
            name("name of the hotel", HOTELS),
        ],
        "restaurant" => vec![
            area("area of the restaurant"),
            price("price budget of the restaurant"),
            SlotSpec {
                slot: "food",
                description: "food type of the restaurant",
                values: FOODS,
                categorical: true,
                phrases: &["serving {} food", "that serves {} food"],
                question: "what kind of food ?",
            },
            name("name of the restaurant", RESTAURANTS),
        ],
        _ => vec![
            area("area of the attraction"),
            SlotSpec {
                slot: "type",
                description: "type of the attraction",
                values: TYPES,
                categorical: true,
                phrases: &["it should be a {}", "some kind of {}"],
                question: "what type of place ?",
            },
            name("name of the attraction", ATTRACTIONS),
        ],
    }
}

fn openers(domain: &str) -> &'static [&'static str] {
    match domain {
        "taxi" => &["i need a taxi", "book me a taxi", "can you get me a taxi"],
        "train" => &[
            "i need a train",
            "i am looking for a train",
            "find me a train",
        ],
        "hotel" => &[
            "i need a hotel",
            "i am looking for a place to stay",
            "find me a hotel",
        ],
        "restaurant" => &[
            "i want a restaurant",
            "i am looking for a place to eat",
            "find me a restaurant",
        ],
        _ => &[
            "i want to visit an attraction",
            "i am looking for something to do",
            "find me an attraction",
        ],
    }
}

const FOLLOW_UPS: &[&str] = &["also", "i would like it", "and"];
const CLOSERS: &[&str] = &[
    "thank you , that is all",
    "great , thanks",
    "that is everything , bye",
];
const CONFIRMS: &[&str] = &["i have booked it for you .", "all set .", "anything else ?"];

/// The schema of the generated corpus.
pub fn schema() -> Vec<SlotSchema> {
    DOMAINS
        .iter()
        .flat_map(|&d| {
            specs(d).into_iter().map(move |s| SlotSchema {
                domain: d.to_string(),
                slot: s.slot.to_string(),
                description: s.description.to_string(),
                values: s
                    .categorical
                    .then(|| s.values.iter().map(|v| v.to_string()).collect()),
            })
        })
        .collect()
}

fn dialogue(domain: &str, id: String, rng: &mut SeededRng) -> Dialogue {
    let specs = specs(domain);
    let mut order: Vec<usize> = (0..specs.len()).collect();
    rng.shuffle(&mut order);
    let n_filled = 1 + rng.below(specs.len());
    order.truncate(n_filled);

    let mut turns = Vec::new();
    let mut state = State::new();
    let mut pending = order.as_slice();
    let mut system = String::new();
    while !pending.is_empty() {
        let take = (1 + rng.below(2)).min(pending.len());
        let (now, rest) = pending.split_at(take);
        let mut parts: Vec<String> = Vec::new();
        if turns.is_empty() {
            parts.push(rng.choose(openers(domain)).to_string());
        } else if rng.below(2) == 0 {
            parts.push(rng.choose(FOLLOW_UPS).to_string());
        }
        for &i in now {
            let spec = &specs[i];
            let value = *rng.choose(spec.values);
            parts.push(rng.choose(spec.phrases).replace("{}", value));
            state.insert(slot_key(domain, spec.slot), value.to_string());
        }
        if rng.below(3) == 0 {
            parts.push("please".to_string());
        }
        turns.push(Turn {
            index: turns.len(),
            user: parts.join(" "),
            system: std::mem::take(&mut system),
            state: state.clone(),
        });
        pending = rest;
        system = match pending.first() {
            Some(&next) if rng.below(2) == 0 => specs[next].question.to_string(),
            _ => rng.choose(CONFIRMS).to_string(),
        };
    }
    if rng.below(2) == 0 {
        turns.push(Turn {
            index: turns.len(),
            user: rng.choose(CLOSERS).to_string(),
            system,
            state,
        });
    }
    Dialogue {
        id,
        domains: vec![domain.to_string()],
        turns,
    }
}

/// `per_domain` single-domain dialogues for each of the five domains.
pub fn generate(seed: u64, per_domain: usize) -> Corpus {
    let mut dialogues = Vec::new();
    for domain in DOMAINS {
        let mut rng = SeededRng::derived(seed, domain);
        for i in 0..per_domain {
            dialogues.push(dialogue(domain, format!("{domain}_{i:03}"), &mut rng));
        }
    }
    Corpus {
        schema: schema(),
        dialogues,
    }
}
