//! Terminal chat loop.

use std::io::Write;
use std::sync::mpsc::{self, Receiver, Sender};

use stlm_core::actions::{Action, ActionData, ParseEvent, WarningReason};
use stlm_core::chat::{ChatEvent, ChatSession, TurnResult};
use stlm_core::transformer::StopReason;

/// Input to the loop, in arrival order.
#[derive(Debug)]
pub enum Input {
    Line(String),
    Eof,
}

enum Msg {
    Input(Input),
    Chat(ChatEvent),
}

/// One-line card for an action.
pub fn action_card(a: &Action) -> String {
    let body = match &a.data {
        ActionData::Call { contact } => format!("[call] {contact}"),
        ActionData::Search { query } => format!("[search] {query}"),
        ActionData::Calendar { when, title } => {
            format!("[calendar] {} {title}", when.format("%Y-%m-%d %H:%M"))
        }
    };
    match a.mismatched_close {
        Some(k) => format!("{body} (closed by <{}>, confirm before acting)", k.name()),
        None => body,
    }
}

fn warning_line(reason: WarningReason, raw: &str) -> Option<String> {
    // the card already reports mismatched closers
    (reason != WarningReason::MismatchedClose)
        .then(|| format!("[warning: {}] {raw}", serde_json::to_value(reason).unwrap().as_str().unwrap()))
}

fn print_event(out: &mut dyn Write, e: &ParseEvent) -> std::io::Result<()> {
    match e {
        ParseEvent::Text { text } => write!(out, "{text}")?,
        ParseEvent::Action { action } => write!(out, "{}", action_card(action))?,
        ParseEvent::Warning { reason, raw_span } => {
            if let Some(l) = warning_line(*reason, raw_span) {
                write!(out, "{l}")?;
            }
        }
    }
    out.flush()
}

fn print_done(out: &mut dyn Write, r: &TurnResult) -> std::io::Result<()> {
    match r.stop_reason {
        StopReason::EndOfText | StopReason::StopSequence => writeln!(out),
        other => writeln!(out, " (stopped: {})", serde_json::to_value(other).unwrap().as_str().unwrap()),
    }
}

/// Runs prompts one after another, waiting for each reply.
pub fn run_script(
    session: &ChatSession,
    prompts: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    for line in prompts {
        let line = line.trim_end_matches(['\r', '\n']).to_string();
        if line.trim().is_empty() {
            continue;
        }
        writeln!(out, "you> {line}")?;
        if handle_command(session, &line, out)? == Command::Quit {
            break;
        }
        if line.starts_with('/') {
            continue;
        }
        write!(out, "bot> ")?;
        let mut err = None;
        let r = session.submit_blocking(&line, &mut |e| {
            if let Err(e) = print_event(out, &e) {
                err.get_or_insert(e);
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        print_done(out, &r)?;
    }
    Ok(())
}

#[derive(PartialEq, Eq)]
enum Command {
    Quit,
    Handled,
    NotACommand,
}

fn handle_command(session: &ChatSession, line: &str, out: &mut dyn Write) -> anyhow::Result<Command> {
    Ok(match line.trim() {
        "/quit" | "/exit" => Command::Quit,
        "/reset" => {
            match session.reset() {
                Ok(()) => writeln!(out, "(conversation cleared)")?,
                Err(e) => writeln!(out, "({e})")?,
            }
            Command::Handled
        }
        "/cancel" => {
            match session.cancel() {
                Ok(()) => writeln!(out, "(cancelling)")?,
                Err(e) => writeln!(out, "({e})")?,
            }
            Command::Handled
        }
        l if l.starts_with('/') => {
            writeln!(out, "(unknown command {l}; try /cancel, /reset, /quit)")?;
            Command::Handled
        }
        _ => Command::NotACommand,
    })
}

/// Interactive loop. Lines that arrive while a reply is streaming are
/// refused, except `/cancel`. Returns when input ends or on `/quit`.
pub fn run_interactive(
    session: &ChatSession,
    input: Receiver<Input>,
    out: &mut dyn Write,
    echo: bool,
) -> anyhow::Result<()> {
    let (tx, rx) = mpsc::channel::<Msg>();
    let forward = tx.clone();
    std::thread::spawn(move || {
        for i in input {
            let eof = matches!(i, Input::Eof);
            if forward.send(Msg::Input(i)).is_err() || eof {
                break;
            }
        }
    });
    let mut ending = false;
    prompt(out, echo)?;
    for msg in rx.iter() {
        match msg {
            Msg::Input(Input::Eof) => {
                if !session.is_busy() {
                    break;
                }
                ending = true;
            }
            Msg::Input(Input::Line(line)) => {
                let line = line.trim_end_matches(['\r', '\n']).to_string();
                if echo {
                    writeln!(out, "{line}")?;
                }
                if line.trim().is_empty() {
                    prompt(out, echo)?;
                    continue;
                }
                match handle_command(session, &line, out)? {
                    Command::Quit => {
                        if session.is_busy() {
                            let _ = session.cancel();
                        }
                        ending = true;
                        if !session.is_busy() {
                            break;
                        }
                        continue;
                    }
                    Command::Handled => {
                        if !session.is_busy() {
                            prompt(out, echo)?;
                        }
                        continue;
                    }
                    Command::NotACommand => {}
                }
                submit(session, &line, &tx, out)?;
            }
            Msg::Chat(ChatEvent::Parse(e)) => print_event(out, &e)?,
            Msg::Chat(ChatEvent::Done(r)) => {
                print_done(out, &r)?;
                if ending {
                    break;
                }
                prompt(out, echo)?;
            }
            Msg::Chat(ChatEvent::Failed(m)) => {
                writeln!(out, "(error: {m})")?;
                if ending {
                    break;
                }
                prompt(out, echo)?;
            }
        }
    }
    Ok(())
}

fn prompt(out: &mut dyn Write, echo: bool) -> std::io::Result<()> {
    write!(out, "you> ")?;
    if !echo {
        out.flush()?;
    }
    Ok(())
}

fn submit(session: &ChatSession, line: &str, tx: &Sender<Msg>, out: &mut dyn Write) -> anyhow::Result<()> {
    let sink = tx.clone();
    match session.submit(line, move |e| {
        let _ = sink.send(Msg::Chat(e));
    }) {
        Ok(_) => {
            write!(out, "bot> ")?;
            out.flush()?;
        }
        Err(stlm_core::Error::Busy) => {
            writeln!(out, "(busy: still replying; wait or /cancel)")?;
        }
        Err(e) => {
            writeln!(out, "(error: {e})")?;
            prompt(out, false)?;
        }
    }
    Ok(())
}
