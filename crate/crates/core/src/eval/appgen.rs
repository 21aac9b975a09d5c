//! Seeded procedural app scripts: a home screen of section rows, section
//! screens holding switches, pickers and text fields, and one task per
//! chosen control.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simenv::{AppScript, DemoStep, Region, Screen, Task, Transition, TransitionAction};

struct Vocab {
    domain: &'static str,
    sections: &'static [&'static str],
    switches: &'static [&'static str],
    pickers: &'static [&'static str],
    fields: &'static [&'static str],
}

const VOCABS: [Vocab; 8] = [
    Vocab {
        domain: "Music",
        sections: &["Playback", "Library", "Downloads", "Radio", "Social", "Storage", "Lyrics", "Podcasts"],
        switches: &["Crossfade", "Gapless", "Autoplay", "Normalize", "Explicit", "Shuffle", "Canvas", "Offline"],
        pickers: &["Quality", "Equalizer", "Language", "Theme", "Region", "Timer"],
        fields: &["Nickname", "Bio", "Email", "Location"],
    },
    Vocab {
        domain: "Shopping",
        sections: &["Orders", "Wallet", "Wishlist", "Addresses", "Coupons", "Alerts", "Returns", "Membership"],
        switches: &[
            "Tracking",
            "Reminders",
            "Deals",
            "Recommendations",
            "Biometrics",
            "Receipts",
            "Autofill",
            "Restock",
        ],
        pickers: &["Currency", "Delivery", "Sizing", "Language", "Country", "Sorting"],
        fields: &["Phone", "Street", "Postcode", "Gift message"],
    },
    Vocab {
        domain: "Travel",
        sections: &["Trips", "Bookings", "Passport", "Loyalty", "Maps", "Alerts", "Seating", "Luggage"],
        switches: &["Traffic", "Tolls", "Ferries", "Satellite", "Weather", "Checkin", "Upgrades", "Boarding"],
        pickers: &["Units", "Transport", "Cabin", "Currency", "Language", "Airport"],
        fields: &["Passport number", "Frequent flyer", "Emergency contact", "Hometown"],
    },
    Vocab {
        domain: "Finance",
        sections: &["Accounts", "Cards", "Transfers", "Budgets", "Investments", "Statements", "Loans", "Security"],
        switches: &["Roundups", "Overdraft", "Contactless", "Cashback", "Paperless", "Freeze", "Insights", "Autopay"],
        pickers: &["Limit", "Cycle", "Portfolio", "Risk", "Currency", "Format"],
        fields: &["Payee", "Reference", "Salary", "Tax number"],
    },
    Vocab {
        domain: "Fitness",
        sections: &["Workouts", "Nutrition", "Sleep", "Goals", "Devices", "Challenges", "Heart", "Hydration"],
        switches: &["Autopause", "Coaching", "Heartbeat", "Cadence", "Splits", "Leaderboard", "Streaks", "Bedtime"],
        pickers: &["Units", "Intensity", "Activity", "Diet", "Wakeup", "Zone"],
        fields: &["Weight", "Height", "Step goal", "Birthday"],
    },
    Vocab {
        domain: "Social",
        sections: &["Profile", "Privacy", "Messages", "Friends", "Stories", "Groups", "Notifications", "Media"],
        switches: &[
            "Readreceipts",
            "Mentions",
            "Autosave",
            "Tagging",
            "Suggestions",
            "Activity",
            "Highlights",
            "Captions",
        ],
        pickers: &["Visibility", "Audience", "Language", "Archive", "Retention", "Quality"],
        fields: &["Username", "Status", "Website", "Pronouns"],
    },
    Vocab {
        domain: "Photography",
        sections: &["Camera", "Gallery", "Editing", "Backup", "Albums", "Sharing", "Printing", "Filters"],
        switches: &["Gridlines", "Geotagging", "Mirroring", "Burst", "Stabilization", "Watermark", "Livephotos", "Hdr"],
        pickers: &["Resolution", "Format", "Aspect", "Framerate", "Countdown", "Compression"],
        fields: &["Caption", "Album name", "Copyright", "Author"],
    },
    Vocab {
        domain: "Productivity",
        sections: &["Calendar", "Tasks", "Notes", "Workspace", "Sync", "Templates", "Reminders", "Sharing"],
        switches: &["Weekends", "Spellcheck", "Autosort", "Darkmode", "Badges", "Autocorrect", "Markdown", "Snooze"],
        pickers: &["Weekstart", "Timezone", "Priority", "Layout", "Density", "Dateformat"],
        fields: &["Signature", "Display name", "Team name", "Default tag"],
    },
];

const NAME_HEADS: [&str; 10] = ["Zen", "Nova", "Pico", "Lumo", "Kiro", "Vela", "Orbi", "Quin", "Tavo", "Sola"];
const NAME_TAILS: [&str; 12] = ["ly", "ify", "io", "bee", "hub", "go", "mo", "ra", "pix", "dex", "zo", "nu"];

const OPTION_SETS: [[&str; 3]; 6] = [
    ["Low", "Medium", "High"],
    ["Daily", "Weekly", "Monthly"],
    ["Small", "Standard", "Large"],
    ["Automatic", "Manual", "Never"],
    ["English", "Spanish", "French"],
    ["Compact", "Comfortable", "Spacious"],
];

const FIELD_VALUES: [&str; 6] = ["Robin", "Harbor 12", "Blue sky", "Evergreen", "North 7", "Maple"];

#[derive(Clone, Copy)]
enum Kind {
    Switch,
    Picker,
    Field,
}

struct Control {
    label: &'static str,
    kind: Kind,
    options: [&'static str; 3],
}

fn id(s: &str) -> String {
    s.to_lowercase().replace(' ', "_")
}

fn region(region_id: String) -> Region {
    Region {
        region_id,
        text: None,
        content_desc: None,
        visible: true,
        actionable: false,
        scrollable: false,
        editable: false,
        checkable: false,
        bounds: None,
        children: Vec::new(),
    }
}

fn labelled(region_id: String, text: &str) -> Region {
    Region { text: Some(text.to_string()), ..region(region_id) }
}

fn button(region_id: String, text: &str) -> Region {
    Region { actionable: true, ..labelled(region_id, text) }
}

fn transition(from: &str, label: &str, action: TransitionAction, to: &str) -> Transition {
    Transition {
        from: from.into(),
        control_label_pattern: format!("{}.*", regex::escape(&label.to_lowercase())),
        action,
        to: to.into(),
        effects: BTreeMap::new(),
    }
}

/// App name for index `i`; unique for the first 120 indices.
pub fn app_name(i: usize) -> String {
    format!("{}{}", NAME_HEADS[i % NAME_HEADS.len()], NAME_TAILS[(i / NAME_HEADS.len()) % NAME_TAILS.len()])
}

/// Builds app number `index` with `tasks` tasks (at most 6). Identical
/// arguments give identical scripts.
pub fn generate_app(index: usize, tasks: usize, seed: u64) -> AppScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let vocab = &VOCABS[index % VOCABS.len()];
    let name = app_name(index);

    let mut sections: Vec<&str> = vocab.sections.to_vec();
    sections.shuffle(&mut rng);
    sections.truncate(4);
    let mut switches = vocab.switches.to_vec();
    let mut pickers = vocab.pickers.to_vec();
    let mut fields = vocab.fields.to_vec();
    switches.shuffle(&mut rng);
    pickers.shuffle(&mut rng);
    fields.shuffle(&mut rng);

    // each section gets one control of each kind, in shuffled order
    let layout: Vec<Vec<Control>> = (0..sections.len())
        .map(|s| {
            let mut row = vec![
                Control { label: switches[s], kind: Kind::Switch, options: OPTION_SETS[0] },
                Control {
                    label: pickers[s],
                    kind: Kind::Picker,
                    options: *OPTION_SETS.choose(&mut rng).expect("options"),
                },
                Control { label: fields[s], kind: Kind::Field, options: OPTION_SETS[0] },
            ];
            row.shuffle(&mut rng);
            row
        })
        .collect();

    let mut screens = Vec::new();
    let mut transitions = Vec::new();
    let mut home = Region { scrollable: true, ..region("root".into()) };
    home.children.push(labelled("title".into(), &name));
    for (s, section) in sections.iter().enumerate() {
        let sid = id(section);
        let mut row = Region { actionable: true, ..region(format!("row_{sid}")) };
        row.children.push(labelled(format!("row_{sid}_t"), section));
        let hint: Vec<&str> = layout[s].iter().take(2).map(|c| c.label).collect();
        row.children.push(labelled(format!("row_{sid}_s"), &hint.join(", ")));
        home.children.push(row);
        transitions.push(transition("home", section, TransitionAction::Click, &sid));
    }
    screens.push(Screen { screen_id: "home".into(), root: home });

    for (s, section) in sections.iter().enumerate() {
        let sid = id(section);
        let mut root = region("root".into());
        root.children.push(labelled("heading".into(), section));
        let mut has_field = false;
        for c in &layout[s] {
            let cid = id(c.label);
            match c.kind {
                Kind::Switch => root.children.push(Region { checkable: true, ..button(cid, c.label) }),
                Kind::Picker => {
                    root.children.push(button(cid.clone(), c.label));
                    let pid = format!("{sid}_{cid}");
                    transitions.push(transition(&sid, c.label, TransitionAction::Click, &pid));
                    let mut proot = region("root".into());
                    proot.children.push(labelled("heading".into(), c.label));
                    for opt in c.options {
                        proot.children.push(button(id(opt), opt));
                        let mut t = transition(&pid, opt, TransitionAction::Click, &sid);
                        t.control_label_pattern = regex::escape(&opt.to_lowercase());
                        t.effects.insert(cid.clone(), opt.to_string());
                        transitions.push(t);
                    }
                    screens.push(Screen { screen_id: pid, root: proot });
                }
                Kind::Field => {
                    has_field = true;
                    root.children.push(Region {
                        actionable: true,
                        editable: true,
                        content_desc: Some(c.label.to_string()),
                        ..region(cid)
                    });
                }
            }
        }
        if has_field {
            root.children.push(button("save".into(), "Save"));
            let mut t = transition(&sid, "Save", TransitionAction::Click, "home");
            t.control_label_pattern = "save".into();
            transitions.push(t);
        }
        screens.push(Screen { screen_id: sid, root });
    }

    let mut slots: Vec<(usize, usize)> = (0..sections.len()).flat_map(|s| (0..3).map(move |c| (s, c))).collect();
    slots.shuffle(&mut rng);
    let mut task_list = Vec::new();
    let mut used_sections = Vec::new();
    for (s, c) in slots {
        if task_list.len() >= tasks.min(6) {
            break;
        }
        // at most two tasks per section keeps intents distinguishable
        if used_sections.iter().filter(|&&u| u == s).count() >= 2 {
            continue;
        }
        used_sections.push(s);
        let control = &layout[s][c];
        let section = sections[s];
        let open = DemoStep { action: TransitionAction::Click, label: section.into(), text: None };
        let lower = control.label.to_lowercase();
        let (intent, goal, demo, aux) = match control.kind {
            Kind::Switch => (
                format!("turn on {lower}"),
                id(section),
                vec![open, DemoStep { action: TransitionAction::Toggle, label: control.label.into(), text: None }],
                BTreeMap::new(),
            ),
            Kind::Picker => {
                let opt = control.options[rng.random_range(1..3)];
                (
                    format!("set {lower} to {}", opt.to_lowercase()),
                    id(section),
                    vec![
                        open,
                        DemoStep { action: TransitionAction::Click, label: control.label.into(), text: None },
                        DemoStep { action: TransitionAction::Click, label: opt.into(), text: None },
                    ],
                    BTreeMap::new(),
                )
            }
            Kind::Field => {
                let value = FIELD_VALUES.choose(&mut rng).expect("values").to_string();
                (
                    format!("change your {lower}"),
                    "home".to_string(),
                    vec![
                        open,
                        DemoStep {
                            action: TransitionAction::Input,
                            label: control.label.into(),
                            text: Some(value.clone()),
                        },
                        DemoStep { action: TransitionAction::Click, label: "Save".into(), text: None },
                    ],
                    BTreeMap::from([(lower.clone(), value)]),
                )
            }
        };
        task_list.push(Task {
            task_id: format!("t{}_{}", task_list.len() + 1, id(control.label)),
            intent,
            goal_screen: goal,
            aux_context: aux,
            demo,
        });
    }

    let value = serde_json::json!({
        "app_name": name,
        "domain": vocab.domain,
        "initial_screen": "home",
        "screens": screens,
        "transitions": transitions,
        "tasks": task_list,
    });
    AppScript::from_json(&value.to_string(), &format!("generated:{name}")).expect("generated script is valid")
}

pub fn domains() -> impl Iterator<Item = &'static str> {
    VOCABS.iter().map(|v| v.domain)
}
