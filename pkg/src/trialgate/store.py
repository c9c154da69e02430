"""Single-file relational persistence for projected gates.

Gates live in five linked tables: ECNF maps each entity (one trial
side/subcohort, or one patient fact set) to a CNF id, CNFD lists the
CNF's clauses with their roles, DA links clauses to atoms, and AB/AN
hold the boolean and numeric atom content. Atom rows are uniquified by
content, qualifier tokens sit in the AQ side table keyed by an
order-insensitive digest, and every id is assigned in canonical sort
order so the stored bytes are a pure function of the ingested gate
set.

Rational bounds are stored twice: an exact "n/d" text column for
lossless round-trips and a REAL mirror that SQL comparisons use. The
mirrors are exact for integer-valued bounds, which is what the bundled
generators produce; callers feeding wilder rationals should lean on
the in-memory retrieval path for confirmation.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import CorruptStore, DuplicateEntity, IoError, UnknownEntity
from .model import Cmp
from .projection import GateAtom, GateClause, GateCNF, qualifiers_digest
from .temporal import TimeWindow

SCHEMA_VERSION = 1

DDL = """
CREATE TABLE META (
    schema_version INTEGER NOT NULL
);
CREATE TABLE ECNF (
    cnf_id      INTEGER PRIMARY KEY,
    entity_id   TEXT NOT NULL,
    entity_kind TEXT NOT NULL CHECK (entity_kind IN ('Trial', 'Patient')),
    side        TEXT NOT NULL,
    subcohort   TEXT NOT NULL,
    truncated   INTEGER NOT NULL DEFAULT 0,
    UNIQUE (entity_id, entity_kind, side, subcohort)
);
CREATE TABLE CNFD (
    cnf_id      INTEGER NOT NULL REFERENCES ECNF(cnf_id),
    clause_id   INTEGER NOT NULL,
    ord         INTEGER NOT NULL,
    clause_role TEXT NOT NULL,
    source_tag  TEXT,
    PRIMARY KEY (cnf_id, ord)
);
CREATE TABLE DA (
    clause_id INTEGER NOT NULL,
    atom_id   INTEGER NOT NULL,
    ord       INTEGER NOT NULL,
    PRIMARY KEY (clause_id, ord)
);
CREATE TABLE AB (
    atom_id           INTEGER PRIMARY KEY,
    relation          TEXT NOT NULL,
    concept           TEXT NOT NULL,
    qualifiers_digest TEXT NOT NULL,
    cmp               TEXT NOT NULL,
    bool_target       INTEGER NOT NULL,
    polarity          INTEGER NOT NULL,
    win_lo REAL NOT NULL, win_hi REAL NOT NULL,
    win_lo_incl INTEGER NOT NULL, win_hi_incl INTEGER NOT NULL,
    win_lo_exact TEXT NOT NULL, win_hi_exact TEXT NOT NULL,
    cert_lo REAL NOT NULL, cert_hi REAL NOT NULL,
    cert_lo_incl INTEGER NOT NULL, cert_hi_incl INTEGER NOT NULL,
    cert_lo_exact TEXT NOT NULL, cert_hi_exact TEXT NOT NULL
);
CREATE TABLE AN (
    atom_id           INTEGER PRIMARY KEY,
    relation          TEXT NOT NULL,
    concept           TEXT NOT NULL,
    qualifiers_digest TEXT NOT NULL,
    cmp               TEXT NOT NULL,
    lower REAL NOT NULL, upper REAL NOT NULL,
    lower_incl INTEGER NOT NULL, upper_incl INTEGER NOT NULL,
    lower_exact TEXT NOT NULL, upper_exact TEXT NOT NULL,
    unit              TEXT,
    polarity          INTEGER NOT NULL,
    win_lo REAL NOT NULL, win_hi REAL NOT NULL,
    win_lo_incl INTEGER NOT NULL, win_hi_incl INTEGER NOT NULL,
    win_lo_exact TEXT NOT NULL, win_hi_exact TEXT NOT NULL,
    cert_lo REAL NOT NULL, cert_hi REAL NOT NULL,
    cert_lo_incl INTEGER NOT NULL, cert_hi_incl INTEGER NOT NULL,
    cert_lo_exact TEXT NOT NULL, cert_hi_exact TEXT NOT NULL
);
CREATE TABLE AQ (
    digest TEXT NOT NULL,
    token  TEXT NOT NULL,
    PRIMARY KEY (digest, token)
);
CREATE INDEX idx_ab_relation_concept ON AB(relation, concept);
CREATE INDEX idx_an_relation_concept ON AN(relation, concept);
CREATE INDEX idx_ecnf_entity ON ECNF(entity_id);
CREATE INDEX idx_cnfd_clause ON CNFD(clause_id);
CREATE INDEX idx_da_atom ON DA(atom_id);
"""

_TABLES = ("META", "ECNF", "CNFD", "DA", "AB", "AN", "AQ")


def _frac_text(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def _frac_parse(text: str) -> Fraction:
    return Fraction(text)


def _window_cols(w: TimeWindow) -> Tuple:
    return (float(w.lower), float(w.upper),
            int(w.lower_inclusive), int(w.upper_inclusive),
            _frac_text(w.lower), _frac_text(w.upper))


def _window_from_cols(lo_exact: str, hi_exact: str, lo_incl: int, hi_incl: int) -> TimeWindow:
    return TimeWindow(_frac_parse(lo_exact), _frac_parse(hi_exact),
                      bool(lo_incl), bool(hi_incl))


def _atom_sort_key(atom: GateAtom) -> Tuple:
    return (
        atom.numeric, atom.relation, atom.concept, atom.qualifiers,
        atom.cmp.value,
        -1 if atom.bool_target is None else int(atom.bool_target),
        atom.lower if atom.lower is not None else Fraction(0),
        atom.upper if atom.upper is not None else Fraction(0),
        atom.lower_incl, atom.upper_incl, atom.unit or "",
        atom.polarity, atom.window.key(), atom.cert.key(),
    )


@dataclass
class StoreHandle:
    conn: sqlite3.Connection
    path: str

    def close(self) -> None:
        self.conn.close()

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _entity_key(gate: GateCNF) -> Tuple[str, str, str, str]:
    return (gate.entity_kind, gate.owner, gate.side, gate.subcohort)


def build_store(gates: Sequence[GateCNF], path) -> StoreHandle:
    """Create a new store file holding the given gates."""
    target = Path(path)
    if target.exists():
        raise IoError(f"store file {target} already exists; builds never overwrite")
    seen: set = set()
    for gate in gates:
        key = _entity_key(gate)
        if key in seen:
            raise DuplicateEntity(
                f"{gate.entity_kind} {gate.owner!r} side={gate.side!r} "
                f"subcohort={gate.subcohort!r} ingested twice")
        seen.add(key)

    atom_ids: Dict[GateAtom, int] = {}
    unique_atoms = {a for g in gates for c in g.clauses for a in c.atoms}
    for i, atom in enumerate(sorted(unique_atoms, key=_atom_sort_key), start=1):
        atom_ids[atom] = i

    clause_ids: Dict[Tuple[int, ...], int] = {}
    unique_clauses = {tuple(atom_ids[a] for a in c.atoms)
                      for g in gates for c in g.clauses}
    for i, content in enumerate(sorted(unique_clauses), start=1):
        clause_ids[content] = i

    ordered_gates = sorted(gates, key=_entity_key)

    try:
        conn = sqlite3.connect(str(target))
    except sqlite3.Error as exc:
        raise IoError(f"cannot create store at {target}: {exc}") from exc
    try:
        with conn:
            conn.executescript(DDL)
            conn.execute("INSERT INTO META (schema_version) VALUES (?)",
                         (SCHEMA_VERSION,))
            _insert_atoms(conn, atom_ids)
            for content, clause_id in sorted(clause_ids.items(), key=lambda kv: kv[1]):
                conn.executemany(
                    "INSERT INTO DA (clause_id, atom_id, ord) VALUES (?, ?, ?)",
                    [(clause_id, atom_id, ord_)
                     for ord_, atom_id in enumerate(content)])
            for cnf_id, gate in enumerate(ordered_gates, start=1):
                conn.execute(
                    "INSERT INTO ECNF (cnf_id, entity_id, entity_kind, side,"
                    " subcohort, truncated) VALUES (?, ?, ?, ?, ?, ?)",
                    (cnf_id, gate.owner, gate.entity_kind, gate.side,
                     gate.subcohort, int(gate.truncated)))
                conn.executemany(
                    "INSERT INTO CNFD (cnf_id, clause_id, ord, clause_role,"
                    " source_tag) VALUES (?, ?, ?, ?, ?)",
                    [(cnf_id, clause_ids[tuple(atom_ids[a] for a in c.atoms)],
                      ord_, c.role, c.source_tag)
                     for ord_, c in enumerate(gate.clauses)])
    except sqlite3.Error as exc:
        conn.close()
        raise IoError(f"store build failed: {exc}") from exc
    return StoreHandle(conn, str(target))


def _insert_atoms(conn: sqlite3.Connection, atom_ids: Dict[GateAtom, int]) -> None:
    tokens = set()
    for atom, atom_id in sorted(atom_ids.items(), key=lambda kv: kv[1]):
        digest = atom.digest()
        tokens.update((digest, t) for t in atom.qualifiers)
        shared = (atom_id, atom.relation, atom.concept, digest, atom.cmp.value)
        windows = _window_cols(atom.window) + _window_cols(atom.cert)
        if atom.numeric:
            conn.execute(
                "INSERT INTO AN VALUES (?,?,?,?,?, ?,?,?,?,?,?, ?,?,"
                " ?,?,?,?,?,?, ?,?,?,?,?,?)",
                shared + (
                    float(atom.lower), float(atom.upper),
                    int(atom.lower_incl), int(atom.upper_incl),
                    _frac_text(atom.lower), _frac_text(atom.upper),
                    atom.unit, int(atom.polarity),
                ) + windows)
        else:
            conn.execute(
                "INSERT INTO AB VALUES (?,?,?,?,?, ?,?, ?,?,?,?,?,?,"
                " ?,?,?,?,?,?)",
                shared + (int(atom.bool_target), int(atom.polarity)) + windows)
    conn.executemany("INSERT INTO AQ (digest, token) VALUES (?, ?)",
                     sorted(tokens))


def open_store(path) -> StoreHandle:
    target = Path(path)
    if not target.is_file():
        raise IoError(f"no store file at {target}")
    conn = sqlite3.connect(str(target))
    try:
        names = {row[0] for row in conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table'")}
        missing = [t for t in _TABLES if t not in names]
        if missing:
            raise CorruptStore(f"store at {target} lacks tables: {', '.join(missing)}")
        versions = [row[0] for row in conn.execute("SELECT schema_version FROM META")]
        if versions != [SCHEMA_VERSION]:
            raise CorruptStore(
                f"store at {target} has schema_version {versions}, expected "
                f"[{SCHEMA_VERSION}]")
    except sqlite3.Error as exc:
        conn.close()
        raise CorruptStore(f"store at {target} is unreadable: {exc}") from exc
    except Exception:
        conn.close()
        raise
    return StoreHandle(conn, str(target))


def _atom_from_row(conn: sqlite3.Connection, atom_id: int) -> GateAtom:
    row = conn.execute(
        "SELECT relation, concept, qualifiers_digest, cmp, bool_target,"
        " polarity, win_lo_incl, win_hi_incl, win_lo_exact, win_hi_exact,"
        " cert_lo_incl, cert_hi_incl, cert_lo_exact, cert_hi_exact"
        " FROM AB WHERE atom_id = ?", (atom_id,)).fetchone()
    if row is not None:
        (relation, concept, digest, cmp, bool_target, polarity,
         wli, whi, wle, whe, cli, chi, cle, che) = row
        return GateAtom(
            relation=relation, concept=concept,
            qualifiers=_tokens(conn, digest),
            window=_window_from_cols(wle, whe, wli, whi),
            cert=_window_from_cols(cle, che, cli, chi),
            numeric=False, cmp=Cmp(cmp), bool_target=bool(bool_target),
            polarity=bool(polarity))
    row = conn.execute(
        "SELECT relation, concept, qualifiers_digest, cmp, lower_incl,"
        " upper_incl, lower_exact, upper_exact, unit, polarity,"
        " win_lo_incl, win_hi_incl, win_lo_exact, win_hi_exact,"
        " cert_lo_incl, cert_hi_incl, cert_lo_exact, cert_hi_exact"
        " FROM AN WHERE atom_id = ?", (atom_id,)).fetchone()
    if row is None:
        raise CorruptStore(f"atom {atom_id} missing from both AB and AN")
    (relation, concept, digest, cmp, li, ui, le, ue, unit, polarity,
     wli, whi, wle, whe, cli, chi, cle, che) = row
    return GateAtom(
        relation=relation, concept=concept, qualifiers=_tokens(conn, digest),
        window=_window_from_cols(wle, whe, wli, whi),
        cert=_window_from_cols(cle, che, cli, chi),
        numeric=True, cmp=Cmp(cmp),
        lower=_frac_parse(le), upper=_frac_parse(ue),
        lower_incl=bool(li), upper_incl=bool(ui),
        unit=unit, polarity=bool(polarity))


def _tokens(conn: sqlite3.Connection, digest: str) -> Tuple[str, ...]:
    rows = conn.execute("SELECT token FROM AQ WHERE digest = ? ORDER BY token",
                        (digest,))
    return tuple(row[0] for row in rows)


def dump_entity(h: StoreHandle, entity_id: str,
                side: Optional[str] = None,
                subcohort: Optional[str] = None) -> GateCNF:
    """Reconstruct an ingested gate. When an entity has several gates
    (a trial's two sides, say), side/subcohort pick one."""
    sql = ("SELECT cnf_id, entity_kind, side, subcohort, truncated"
           " FROM ECNF WHERE entity_id = ?")
    params: List = [entity_id]
    if side is not None:
        sql += " AND side = ?"
        params.append(side)
    if subcohort is not None:
        sql += " AND subcohort = ?"
        params.append(subcohort)
    rows = h.conn.execute(sql, params).fetchall()
    if not rows:
        raise UnknownEntity(f"no gate stored for {entity_id!r}"
                            + (f" side={side!r}" if side else ""))
    if len(rows) > 1:
        sides = sorted((r[2], r[3]) for r in rows)
        raise DuplicateEntity(
            f"{entity_id!r} has {len(rows)} gates {sides}; pass side/subcohort")
    cnf_id, entity_kind, side_, subcohort_, truncated = rows[0]
    gate = GateCNF(owner=entity_id, entity_kind=entity_kind, side=side_,
                   subcohort=subcohort_, truncated=bool(truncated))
    clause_rows = h.conn.execute(
        "SELECT clause_id, clause_role, source_tag FROM CNFD"
        " WHERE cnf_id = ? ORDER BY ord", (cnf_id,)).fetchall()
    for clause_id, role, tag in clause_rows:
        atom_rows = h.conn.execute(
            "SELECT atom_id FROM DA WHERE clause_id = ? ORDER BY ord",
            (clause_id,)).fetchall()
        atoms = tuple(_atom_from_row(h.conn, atom_id) for (atom_id,) in atom_rows)
        gate.clauses.append(GateClause(role=role, atoms=atoms, source_tag=tag))
    return gate


def entity_ids(h: StoreHandle, entity_kind: Optional[str] = None) -> List[Tuple[str, str, str]]:
    """(entity_id, side, subcohort) triples, canonically ordered."""
    sql = "SELECT entity_id, side, subcohort FROM ECNF"
    params: Tuple = ()
    if entity_kind is not None:
        sql += " WHERE entity_kind = ?"
        params = (entity_kind,)
    sql += " ORDER BY entity_kind, entity_id, side, subcohort"
    return [tuple(row) for row in h.conn.execute(sql, params)]


def integrity_scan(h: StoreHandle) -> List[str]:
    """Cross-table referential checks. Returns problem descriptions."""
    problems: List[str] = []
    conn = h.conn
    queries = (
        ("CNFD row with no ECNF parent",
         "SELECT COUNT(*) FROM CNFD LEFT JOIN ECNF USING (cnf_id)"
         " WHERE ECNF.cnf_id IS NULL"),
        ("DA row with no CNFD reference",
         "SELECT COUNT(*) FROM DA LEFT JOIN CNFD USING (clause_id)"
         " WHERE CNFD.clause_id IS NULL"),
        ("DA row whose atom is in neither AB nor AN",
         "SELECT COUNT(*) FROM DA WHERE atom_id NOT IN"
         " (SELECT atom_id FROM AB UNION SELECT atom_id FROM AN)"),
        ("atom_id present in both AB and AN",
         "SELECT COUNT(*) FROM AB JOIN AN USING (atom_id)"),
        ("AB digest with no AQ tokens despite non-empty digest",
         "SELECT COUNT(*) FROM AB WHERE qualifiers_digest != ?"
         " AND qualifiers_digest NOT IN (SELECT digest FROM AQ)"),
        ("AN digest with no AQ tokens despite non-empty digest",
         "SELECT COUNT(*) FROM AN WHERE qualifiers_digest != ?"
         " AND qualifiers_digest NOT IN (SELECT digest FROM AQ)"),
    )
    empty = qualifiers_digest(())
    for label, sql in queries:
        count = conn.execute(sql, (empty,) if "?" in sql else ()).fetchone()[0]
        if count:
            problems.append(f"{label}: {count} rows")
    return problems


def table_counts(h: StoreHandle) -> Dict[str, int]:
    return {t: h.conn.execute(f"SELECT COUNT(*) FROM {t}").fetchone()[0]
            for t in _TABLES}
